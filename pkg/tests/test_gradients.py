"""
Finite-difference checks of every hand-written backward pass.

All checks run in float64 with central differences (h = 1e-3) against a
random linear functional L = sum(out * probe).
"""

from typing import Callable, List

import numpy as np
import pytest

from cle_triage.nets import Network, _SpecBuilder
from cle_triage.nn import functional as F
from cle_triage.nn.layers import Conv2D, FullyConnected, Inception, Layer, LocalResponseNorm
from cle_triage.nn.loss import one_hot, softmax_cross_entropy
from cle_triage.nn.params import LayerParams

H = 1e-3
RTOL = 1e-4
ATOL = 1e-6


def numeric_grad(f: Callable[[], float], x: np.ndarray, samples: int = 12, seed: int = 0) -> List:
    """Central differences of f at a random subset of x's elements."""
    rng = np.random.default_rng(seed)
    flat = x.reshape(-1)
    picks = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
    out = []
    for i in picks:
        original = flat[i]
        flat[i] = original + H
        plus = f()
        flat[i] = original - H
        minus = f()
        flat[i] = original
        out.append((int(i), (plus - minus) / (2 * H)))
    return out


def check_layer(layer: Layer, x: np.ndarray, seed: int = 0) -> None:
    """Compare a layer's input and parameter gradients against finite differences."""
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(layer.infer(x).shape)

    def loss() -> float:
        return float(np.sum(layer.infer(x) * probe))

    for p in layer.params:
        p.zero_grad()
    layer.forward(x)
    grad_in = layer.backward(probe)

    for i, expected in numeric_grad(loss, x, seed=seed):
        assert grad_in.reshape(-1)[i] == pytest.approx(expected, rel=RTOL, abs=ATOL)
    for p in layer.params:
        for tensor, grad in ((p.weights, p.grad_weights), (p.bias, p.grad_bias)):
            for i, expected in numeric_grad(loss, tensor, seed=seed):
                assert grad.reshape(-1)[i] == pytest.approx(expected, rel=RTOL, abs=ATOL)


class TestConvGradients:
    """Conv gradients across kernel, stride and pad combinations."""

    @pytest.mark.parametrize("cin,cout,size,kernel,stride,pad", [
        (1, 2, 5, 3, 1, 0),
        (2, 3, 6, 3, 1, 1),
        (3, 2, 7, 3, 2, 1),
        (2, 2, 9, 5, 2, 2),
        (1, 4, 8, 1, 1, 0),
        (2, 1, 11, 4, 3, 1),
        (3, 3, 5, 5, 1, 2),
        (1, 2, 12, 11, 4, 3),
    ])
    def test_conv(self, cin, cout, size, kernel, stride, pad):
        rng = np.random.default_rng(cin * 100 + size)
        layer = Conv2D(cin, cout, kernel, stride, pad, rng=rng, dtype=np.float64)
        layer.param.bias[...] = rng.standard_normal(cout)
        x = rng.standard_normal((2, cin, size, size))
        check_layer(layer, x)


class TestOtherLayerGradients:
    """FC, LRN, pooling, dropout, ReLU and global average pooling gradients."""

    @pytest.mark.parametrize("n,din,dout", [(1, 3, 2), (4, 10, 5), (3, 32, 2)])
    def test_fully_connected(self, n, din, dout):
        rng = np.random.default_rng(din)
        layer = FullyConnected(din, dout, rng=rng, dtype=np.float64)
        check_layer(layer, rng.standard_normal((n, din)))

    @pytest.mark.parametrize("channels,radius", [(1, 2), (5, 2), (7, 1)])
    def test_lrn(self, channels, radius):
        rng = np.random.default_rng(channels)
        # large alpha so the normalization term matters at unit-scale inputs
        layer = LocalResponseNorm(depth_radius=radius, k=2.0, alpha=0.1, beta=0.75)
        check_layer(layer, rng.standard_normal((2, channels, 3, 3)))

    @pytest.mark.parametrize("window,stride", [(2, 2), (3, 2)])
    def test_maxpool(self, window, stride):
        rng = np.random.default_rng(window)
        # distinct values spaced well beyond H so no perturbation changes a winner
        x = rng.permutation(2 * 3 * 7 * 7).astype(np.float64).reshape(2, 3, 7, 7) * 0.1
        probe = rng.standard_normal(F.maxpool_forward(x, window, stride)[0].shape)

        def loss() -> float:
            return float(np.sum(F.maxpool_forward(x, window, stride)[0] * probe))

        _, argmax = F.maxpool_forward(x, window, stride)
        grad = F.maxpool_backward(probe, argmax)
        for i, expected in numeric_grad(loss, x, samples=30):
            assert grad.reshape(-1)[i] == pytest.approx(expected, rel=RTOL, abs=ATOL)

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(3)
        x = rng.choice([-1.0, 1.0], size=(2, 3, 4, 4)) * (0.5 + rng.random((2, 3, 4, 4)))
        probe = rng.standard_normal(x.shape)

        def loss() -> float:
            return float(np.sum(F.relu(x) * probe))

        grad = F.relu_backward(probe, x)
        for i, expected in numeric_grad(loss, x):
            assert grad.reshape(-1)[i] == pytest.approx(expected, rel=RTOL, abs=ATOL)

    def test_dropout_with_fixed_mask(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 20))
        probe = rng.standard_normal(x.shape)

        def loss() -> float:
            out, _ = F.dropout(x, 0.4, True, np.random.default_rng(9))
            return float(np.sum(out * probe))

        _, mask = F.dropout(x, 0.4, True, np.random.default_rng(9))
        grad = F.dropout_backward(probe, mask)
        for i, expected in numeric_grad(loss, x):
            assert grad.reshape(-1)[i] == pytest.approx(expected, rel=RTOL, abs=ATOL)

    def test_global_avg_pool(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 4, 4))
        probe = rng.standard_normal((2, 3))

        def loss() -> float:
            return float(np.sum(F.global_avg_pool_forward(x) * probe))

        grad = F.global_avg_pool_backward(probe, x.shape)
        for i, expected in numeric_grad(loss, x):
            assert grad.reshape(-1)[i] == pytest.approx(expected, rel=RTOL, abs=ATOL)


DRAWS = range(20)


def _draw_rng(layer_seed: int, draw: int) -> np.random.Generator:
    return np.random.default_rng([layer_seed, draw])


class TestRandomShapeGradients:
    """Seeded random shapes and hyperparameters for every layer with a backward pass."""

    @pytest.mark.parametrize("draw", DRAWS)
    def test_conv(self, draw):
        rng = _draw_rng(11, draw)
        cin, cout = rng.integers(1, 4, size=2)
        kernel = int(rng.integers(1, 6))
        stride = int(rng.integers(1, 4))
        pad = int(rng.integers(0, kernel // 2 + 1))
        size = kernel + int(rng.integers(0, 6))
        layer = Conv2D(int(cin), int(cout), kernel, stride, pad, rng=rng, dtype=np.float64)
        layer.param.bias[...] = rng.standard_normal(int(cout))
        x = rng.standard_normal((int(rng.integers(1, 3)), int(cin), size, size))
        check_layer(layer, x, seed=draw)

    @pytest.mark.parametrize("draw", DRAWS)
    def test_fully_connected(self, draw):
        rng = _draw_rng(12, draw)
        n, din, dout = int(rng.integers(1, 5)), int(rng.integers(1, 17)), int(rng.integers(1, 7))
        layer = FullyConnected(din, dout, rng=rng, dtype=np.float64)
        layer.param.bias[...] = rng.standard_normal(dout)
        check_layer(layer, rng.standard_normal((n, din)), seed=draw)

    @pytest.mark.parametrize("draw", DRAWS)
    def test_lrn(self, draw):
        rng = _draw_rng(13, draw)
        channels, radius = int(rng.integers(1, 9)), int(rng.integers(1, 4))
        height, width = rng.integers(1, 5, size=2)
        layer = LocalResponseNorm(depth_radius=radius, k=2.0, alpha=0.1, beta=0.75)
        x = rng.standard_normal((int(rng.integers(1, 3)), channels, int(height), int(width)))
        check_layer(layer, x, seed=draw)

    @pytest.mark.parametrize("draw", DRAWS)
    def test_maxpool(self, draw):
        rng = _draw_rng(14, draw)
        window, stride = int(rng.integers(2, 4)), int(rng.integers(1, 4))
        pad = int(rng.integers(0, window // 2 + 1))
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                 window + int(rng.integers(0, 6)), window + int(rng.integers(0, 6)))
        x = rng.permutation(int(np.prod(shape))).astype(np.float64).reshape(shape) * 0.1
        probe = rng.standard_normal(F.maxpool_forward(x, window, stride, pad)[0].shape)

        def loss() -> float:
            return float(np.sum(F.maxpool_forward(x, window, stride, pad)[0] * probe))

        _, argmax = F.maxpool_forward(x, window, stride, pad)
        grad = F.maxpool_backward(probe, argmax)
        for i, expected in numeric_grad(loss, x, samples=20, seed=draw):
            assert grad.reshape(-1)[i] == pytest.approx(expected, rel=RTOL, abs=ATOL)

    @pytest.mark.parametrize("draw", DRAWS)
    def test_inception_block(self, draw):
        rng = _draw_rng(15, draw)
        cin, c1, c3r, c3, c5r, c5, proj = (int(v) for v in rng.integers(1, 4, size=7))
        size = int(rng.integers(3, 6))
        layer = Inception(cin, c1, c3r, c3, c5r, c5, proj, rng=rng, dtype=np.float64)
        for p in layer.params:
            np.abs(p.weights, out=p.weights)
        x = (rng.permutation(cin * size * size) * 0.02 + 0.5).reshape(1, cin, size, size)
        check_layer(layer, x, seed=draw)


class TestCompositeGradients:
    """Inception blocks, the softmax loss and whole networks."""

    def test_inception_block(self):
        rng = np.random.default_rng(6)
        layer = Inception(3, 2, 2, 3, 1, 2, 2, rng=rng, dtype=np.float64)
        # positive weights and inputs keep every ReLU on its linear side; inputs
        # spaced 0.02 apart keep every pooling winner fixed under perturbation
        for p in layer.params:
            np.abs(p.weights, out=p.weights)
        x = (rng.permutation(75) * 0.02 + 0.5).reshape(1, 3, 5, 5)
        check_layer(layer, x)

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(7)
        logits = rng.standard_normal((4, 2))
        targets = one_hot(np.array([0, 1, 1, 0]), 2)
        analytic = softmax_cross_entropy(logits, targets).gradient

        def loss() -> float:
            return softmax_cross_entropy(logits, targets).value

        for i, expected in numeric_grad(loss, logits, samples=8):
            assert analytic.reshape(-1)[i] == pytest.approx(expected, rel=RTOL, abs=ATOL)

    @pytest.mark.parametrize("head", ["fc", "gap"])
    def test_network_end_to_end(self, head):
        b = _SpecBuilder("smooth", (1, 8, 8))
        b.conv(3, 3, pad=1).lrn().conv(2, 3, stride=2)
        if head == "gap":
            b.gap().fc(2)
        else:
            b.flatten().fc(4).fc(2)
        net = Network(b.build(), seed=1, dtype=np.float64)
        rng = np.random.default_rng(8)
        x = rng.standard_normal((3, 1, 8, 8))
        targets = one_hot(np.array([1, 0, 1]), 2)

        def loss() -> float:
            return softmax_cross_entropy(net.infer(x), targets).value

        net.zero_grad()
        value = softmax_cross_entropy(net.forward(x, training=True), targets)
        net.backward(value.gradient)
        for p in net.parameters():
            for tensor, grad in ((p.weights, p.grad_weights), (p.bias, p.grad_bias)):
                for i, expected in numeric_grad(loss, tensor, samples=6):
                    assert grad.reshape(-1)[i] == pytest.approx(expected, rel=RTOL, abs=ATOL)

    def test_params_as_float64(self):
        p = LayerParams(np.ones((2, 3), dtype=np.float32), np.zeros(2, dtype=np.float32))
        assert p.astype(np.float64).velocity_weights.dtype == np.float64
