"""
Tests for network specifications, the reference architectures and Network.
"""

from dataclasses import replace

import numpy as np
import pytest

from cle_triage.errors import ConfigurationError, StructuralError
from cle_triage.nets import (
    ARCHITECTURES,
    LayerSpec,
    NetSpec,
    Network,
    build_architecture,
    build_full_alexnet,
    build_mini_alexnet,
    build_mini_inception_net,
    infer_output_shape,
)


class TestShapeInference:
    """Test per-layer shape rules."""

    def test_canonical_first_conv(self):
        layer = LayerSpec("conv", (3, 227, 227), (), kernel=11, stride=4, out_channels=96)
        assert infer_output_shape(layer, (3, 227, 227)) == (96, 55, 55)

    def test_fc_needs_flat_input(self):
        layer = LayerSpec("fc", (4, 2, 2), (), out_channels=2)
        with pytest.raises(StructuralError, match="flat input"):
            infer_output_shape(layer, (4, 2, 2))

    def test_unknown_kind(self):
        with pytest.raises(StructuralError, match="Unknown layer kind"):
            infer_output_shape(LayerSpec("softplus", (1,), ()), (1,))


class TestNetSpec:
    """Test construction-time validation and serialization."""

    def test_broken_chain_names_layer(self):
        layers = (
            LayerSpec("flatten", (1, 4, 4), (16,)),
            LayerSpec("fc", (15,), (2,), out_channels=2),
        )
        with pytest.raises(StructuralError, match="layer 1 \\(fc\\)"):
            NetSpec("broken", (1, 4, 4), layers)

    def test_wrong_declared_output(self):
        layers = (LayerSpec("flatten", (1, 4, 4), (15,)),)
        with pytest.raises(StructuralError, match="computes"):
            NetSpec("broken", (1, 4, 4), layers)

    def test_final_width_must_be_class_count(self):
        layers = (
            LayerSpec("flatten", (1, 2, 2), (4,)),
            LayerSpec("fc", (4,), (3,), out_channels=3),
        )
        with pytest.raises(StructuralError, match="expected \\(2,\\) logits"):
            NetSpec("three", (1, 2, 2), layers)

    @pytest.mark.parametrize("name", sorted(ARCHITECTURES))
    def test_dict_round_trip(self, name):
        spec = build_architecture(name)
        assert NetSpec.from_dict(spec.to_dict()) == spec

    def test_spec_is_immutable(self):
        spec = build_mini_alexnet()
        with pytest.raises(AttributeError):
            spec.name = "other"  # type: ignore[misc]


def _mutate(layer: LayerSpec, rng: np.random.Generator) -> LayerSpec:
    """One inconsistent edit to a layer descriptor."""
    delta = int(rng.integers(1, 4))
    choices = ["in_shape", "out_shape"]
    if layer.kind in ("conv", "fc"):
        choices.append("out_channels")
    if layer.kind == "conv" and layer.stride == 1:
        choices.append("kernel")
    field = choices[int(rng.integers(len(choices)))]
    if field in ("in_shape", "out_shape"):
        shape = list(getattr(layer, field))
        shape[int(rng.integers(len(shape)))] += delta
        return replace(layer, **{field: tuple(shape)})
    return replace(layer, **{field: getattr(layer, field) + delta})


class TestRandomMutations:
    """Every hand-edited inconsistent spec is rejected."""

    @pytest.mark.parametrize("name", sorted(ARCHITECTURES))
    @pytest.mark.parametrize("draw", range(20))
    def test_mutation_rejected(self, name, draw):
        spec = build_architecture(name)
        rng = np.random.default_rng([draw, len(name)])
        layers = list(spec.layers)
        index = int(rng.integers(len(layers)))
        layers[index] = _mutate(layers[index], rng)
        with pytest.raises(StructuralError):
            NetSpec(spec.name, spec.input_shape, tuple(layers), spec.class_count)


class TestInitializationScale:
    """Output/input std of each weighted layer at init, fed unit Gaussian input of its own shape."""

    @pytest.mark.parametrize("name", ["mini-alexnet", "mini-inception"])
    @pytest.mark.parametrize("seed", range(3))
    def test_std_ratio_in_band(self, name, seed):
        spec = build_architecture(name)
        net = Network(spec, seed=seed)
        rng = np.random.default_rng(seed)
        measured = 0
        for layer_spec, layer in zip(spec.layers, net.body.layers):
            if layer_spec.kind not in ("conv", "fc", "inception"):
                continue
            x = rng.standard_normal((32, *layer_spec.in_shape)).astype(np.float32)
            ratio = float(layer.infer(x).std() / x.std())
            assert 0.5 <= ratio <= 2.0, f"{name} layer {layer_spec.kind} {layer_spec.in_shape}: {ratio:.3f}"
            measured += 1
        assert measured >= 3


class TestArchitectures:
    """Test the named builders."""

    def test_mini_alexnet_topology(self):
        spec = build_mini_alexnet()
        kinds = [layer.kind for layer in spec.layers]
        assert kinds.count("conv") == 5
        assert kinds.count("pool") == 3
        assert kinds.count("lrn") == 2
        assert kinds.count("dropout") == 1
        assert spec.input_shape == (1, 64, 64)
        assert spec.layers[-1].out_shape == (2,)

    def test_lrn_and_dropout_toggles(self):
        kinds = [layer.kind for layer in build_mini_alexnet(use_lrn=False, dropout_rate=0.0).layers]
        assert "lrn" not in kinds
        assert "dropout" not in kinds

    def test_full_alexnet_shapes(self):
        spec = build_full_alexnet()
        convs = [layer for layer in spec.layers if layer.kind == "conv"]
        assert [c.out_channels for c in convs] == [96, 256, 384, 384, 256]
        assert convs[0].out_shape == (96, 62, 62)
        fcs = [layer.out_channels for layer in spec.layers if layer.kind == "fc"]
        assert fcs == [4096, 4096, 2]

    def test_full_alexnet_rejects_small_input(self):
        with pytest.raises(StructuralError):
            build_full_alexnet((1, 64, 64))

    def test_mini_inception_blocks(self):
        spec = build_mini_inception_net()
        blocks = [layer for layer in spec.layers if layer.kind == "inception"]
        assert [b.out_shape[0] for b in blocks] == [32, 64]
        assert spec.layers[-2].kind == "gap"

    def test_unknown_architecture_lists_options(self):
        with pytest.raises(ConfigurationError, match="full-alexnet, mini-alexnet, mini-inception"):
            build_architecture("resnet")


class TestNetwork:
    """Test the trainable instance."""

    def test_same_seed_same_weights(self):
        a = Network(build_mini_inception_net((1, 32, 32)), seed=3)
        b = Network(build_mini_inception_net((1, 32, 32)), seed=3)
        for x, y in zip(a.state(), b.state()):
            assert np.array_equal(x, y)

    def test_wrong_input_shape_names_expected(self):
        net = Network(build_mini_alexnet((1, 32, 32)))
        with pytest.raises(StructuralError, match="32x32"):
            net.infer(np.zeros((1, 1, 64, 64), dtype=np.float32))

    def test_predict_proba_in_unit_interval(self, rng):
        net = Network(build_mini_alexnet((1, 32, 32)), seed=0)
        probs = net.predict_proba(rng.standard_normal((5, 1, 32, 32)).astype(np.float32), batch_size=2)
        assert probs.shape == (5,)
        assert ((probs >= 0) & (probs <= 1)).all()

    def test_predict_proba_batch_size_invariant(self, rng):
        net = Network(build_mini_alexnet((1, 32, 32)), seed=0)
        x = rng.standard_normal((6, 1, 32, 32)).astype(np.float32)
        assert np.array_equal(net.predict_proba(x, batch_size=1), net.predict_proba(x, batch_size=6))

    def test_parameter_count(self):
        spec = build_mini_inception_net((1, 32, 32))
        net = Network(spec)
        assert net.parameter_count() == sum(p.weights.size + p.bias.size for p in net.parameters())
        assert net.parameter_count() > 0

    def test_load_state_round_trip_and_resets_velocity(self):
        source = Network(build_mini_alexnet((1, 32, 32)), seed=1)
        target = Network(build_mini_alexnet((1, 32, 32)), seed=2)
        target.parameters()[0].velocity_weights[...] = 1.0
        target.load_state(source.state())
        for x, y in zip(source.state(), target.state()):
            assert np.array_equal(x, y)
        assert not target.parameters()[0].velocity_weights.any()

    def test_load_state_wrong_count(self):
        net = Network(build_mini_alexnet((1, 32, 32)))
        with pytest.raises(StructuralError, match="tensors"):
            net.load_state(net.state()[:-1])
