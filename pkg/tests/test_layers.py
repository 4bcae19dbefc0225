"""
Tests for stateful layers, parameters and the softmax loss.
"""

import numpy as np
import pytest

from cle_triage.errors import StructuralError, UsageError, ValidationError
from cle_triage.nn.layers import (
    Conv2D,
    Dropout,
    Flatten,
    FullyConnected,
    Inception,
    MaxPool2D,
    ReLU,
    Sequential,
)
from cle_triage.nn.loss import one_hot, softmax, softmax_cross_entropy
from cle_triage.nn.params import LayerParams


class TestLayerParams:
    """Test parameter buffers and initialization."""

    def test_buffers_match_shapes(self):
        p = LayerParams(np.ones((3, 2)), np.ones(3))
        assert p.grad_weights.shape == (3, 2)
        assert p.velocity_bias.shape == (3,)
        assert p.size == 9

    def test_mismatched_buffer_rejected(self):
        with pytest.raises(StructuralError, match="grad_weights"):
            LayerParams(np.ones((3, 2)), np.ones(3), grad_weights=np.zeros((2, 3)))

    def test_he_normal_scale(self):
        rng = np.random.default_rng(0)
        p = LayerParams.he_normal((64, 32, 3, 3), 32 * 9, rng)
        assert p.weights.std() == pytest.approx(np.sqrt(2.0 / 288), rel=0.05)
        assert not p.bias.any()
        assert p.weights.dtype == np.float32

    def test_zero_grad(self):
        p = LayerParams(np.ones(2), np.ones(2))
        p.grad_weights += 5
        p.zero_grad()
        assert not p.grad_weights.any()


class TestLayerLifecycle:
    """Forward caches, backward consumes, infer leaves the cache alone."""

    def test_backward_before_forward(self):
        with pytest.raises(UsageError, match="relu"):
            ReLU().backward(np.ones((1, 2)))

    def test_backward_consumes_cache(self):
        layer = ReLU()
        layer.forward(np.ones((1, 2)))
        layer.backward(np.ones((1, 2)))
        with pytest.raises(UsageError):
            layer.backward(np.ones((1, 2)))

    def test_infer_does_not_cache(self):
        layer = ReLU()
        layer.infer(np.ones((1, 2)))
        with pytest.raises(UsageError):
            layer.backward(np.ones((1, 2)))

    def test_dropout_backward_without_mask(self):
        layer = Dropout(0.5)
        x = np.ones((2, 3), dtype=np.float32)
        assert np.array_equal(layer.forward(x, training=False), x)
        assert np.array_equal(layer.backward(np.full((2, 3), 2.0, dtype=np.float32)), np.full((2, 3), 2.0))

    def test_flatten_round_trip_shape(self):
        layer = Flatten()
        out = layer.forward(np.zeros((2, 3, 4, 5)))
        assert out.shape == (2, 60)
        assert layer.backward(out).shape == (2, 3, 4, 5)

    def test_gradients_accumulate_until_zeroed(self, rng):
        layer = FullyConnected(3, 2, rng=rng, dtype=np.float64)
        x = rng.standard_normal((4, 3))
        for _ in range(2):
            layer.forward(x)
            layer.backward(np.ones((4, 2)))
        np.testing.assert_allclose(layer.param.grad_bias, [8.0, 8.0])


class TestComposites:
    """Sequential stacks and inception blocks."""

    def test_sequential_params_in_order(self, rng):
        a = Conv2D(1, 2, 3, rng=rng)
        b = FullyConnected(8, 2, rng=rng)
        seq = Sequential([a, ReLU(), MaxPool2D(2, 2), Flatten(), b])
        assert seq.params == [a.param, b.param]
        assert seq.infer(np.zeros((1, 1, 6, 6), dtype=np.float32)).shape == (1, 2)

    def test_inception_preserves_spatial_size(self, rng):
        block = Inception(4, 2, 3, 5, 1, 3, 2, rng=rng)
        out = block.forward(rng.standard_normal((2, 4, 7, 7)).astype(np.float32))
        assert out.shape == (2, 2 + 5 + 3 + 2, 7, 7)
        assert block.backward(np.ones_like(out)).shape == (2, 4, 7, 7)

    def test_inception_branch_order(self, rng):
        """The first c1 output channels come from the 1x1 branch."""
        block = Inception(1, 1, 1, 1, 1, 1, 1, rng=rng, dtype=np.float64)
        x = rng.standard_normal((1, 1, 5, 5))
        first = block.branches[0].infer(x)
        assert np.array_equal(block.infer(x)[:, :1], first)

    def test_infer_matches_forward(self, rng):
        block = Inception(2, 2, 2, 2, 1, 1, 1, rng=rng)
        x = rng.standard_normal((1, 2, 6, 6)).astype(np.float32)
        assert np.array_equal(block.infer(x), block.forward(x))


class TestSoftmaxLoss:
    """Test softmax, one_hot and the cross-entropy loss."""

    def test_softmax_rows_sum_to_one(self, rng):
        probs = softmax(rng.standard_normal((5, 2)) * 50)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    def test_softmax_large_logits(self):
        probs = softmax(np.array([[1000.0, 0.0]]))
        assert np.isfinite(probs).all()
        assert probs[0, 0] == pytest.approx(1.0)

    def test_uniform_logits_loss_is_log2(self):
        loss = softmax_cross_entropy(np.zeros((3, 2)), one_hot(np.array([0, 1, 1]), 2))
        assert loss.value == pytest.approx(np.log(2.0))

    def test_gradient_is_probs_minus_targets_over_n(self):
        logits = np.array([[0.0, 0.0], [2.0, 0.0]])
        targets = one_hot(np.array([1, 0]), 2)
        grad = softmax_cross_entropy(logits, targets).gradient
        np.testing.assert_allclose(grad, (softmax(logits) - targets) / 2)

    def test_confident_wrong_prediction_is_finite(self):
        loss = softmax_cross_entropy(np.array([[0.0, 800.0]]), one_hot(np.array([0]), 2))
        assert np.isfinite(loss.value)

    def test_shape_mismatch(self):
        with pytest.raises(StructuralError):
            softmax_cross_entropy(np.zeros((2, 2)), np.zeros((3, 2)))

    def test_targets_must_be_one_hot(self):
        with pytest.raises(ValidationError):
            softmax_cross_entropy(np.zeros((1, 2)), np.array([[0.5, 0.5]]))
