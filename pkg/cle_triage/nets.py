"""
Network specifications and reference architectures

A NetSpec is an immutable, declarative description of a classifier: every
layer records the shape it expects and the shape it produces, and the chain
is validated when the NetSpec is constructed. `Network` instantiates a spec
into trainable layers.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, StructuralError
from .nn import functional as F
from .nn.layers import (
    Conv2D,
    Dropout,
    Flatten,
    FullyConnected,
    GlobalAvgPool,
    Inception,
    Layer,
    LocalResponseNorm,
    MaxPool2D,
    ReLU,
    Sequential,
)
from .nn.loss import softmax
from .nn.params import LayerParams

Shape = Tuple[int, ...]

LAYER_KINDS = ("conv", "pool", "relu", "lrn", "flatten", "fc", "dropout", "gap", "inception")


@dataclass(frozen=True)
class InceptionBlockSpec:
    """Branch widths of one inception block (see nn.layers.Inception)."""
    c1: int
    c3_reduce: int
    c3: int
    c5_reduce: int
    c5: int
    pool_proj: int

    @property
    def out_channels(self) -> int:
        return self.c1 + self.c3 + self.c5 + self.pool_proj

    def to_dict(self) -> Dict[str, int]:
        return {
            "c1": self.c1, "c3_reduce": self.c3_reduce, "c3": self.c3,
            "c5_reduce": self.c5_reduce, "c5": self.c5, "pool_proj": self.pool_proj,
        }


@dataclass(frozen=True)
class LayerSpec:
    """One layer descriptor with its declared input and output shapes."""
    kind: str
    in_shape: Shape
    out_shape: Shape
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    out_channels: int = 0
    rate: float = 0.0
    inception: Optional[InceptionBlockSpec] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "kind": self.kind,
            "in_shape": list(self.in_shape),
            "out_shape": list(self.out_shape),
        }
        if self.kind in ("conv", "pool"):
            data.update(kernel=self.kernel, stride=self.stride, pad=self.pad)
        if self.kind in ("conv", "fc"):
            data["out_channels"] = self.out_channels
        if self.kind == "dropout":
            data["rate"] = self.rate
        if self.inception is not None:
            data["inception"] = self.inception.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayerSpec":
        inception = data.get("inception")
        return cls(
            kind=data["kind"],
            in_shape=tuple(data["in_shape"]),
            out_shape=tuple(data["out_shape"]),
            kernel=int(data.get("kernel", 0)),
            stride=int(data.get("stride", 1)),
            pad=int(data.get("pad", 0)),
            out_channels=int(data.get("out_channels", 0)),
            rate=float(data.get("rate", 0.0)),
            inception=InceptionBlockSpec(**inception) if inception else None,
        )


def infer_output_shape(layer: LayerSpec, in_shape: Shape) -> Shape:
    """Shape a layer produces from `in_shape`, or StructuralError if it can't apply."""
    kind = layer.kind
    if kind not in LAYER_KINDS:
        raise StructuralError(f"Unknown layer kind {kind!r}")

    if kind in ("relu", "dropout"):
        return in_shape
    if kind == "fc":
        if len(in_shape) != 1:
            raise StructuralError(f"fc layer needs a flat input, got {in_shape}")
        return (layer.out_channels,)
    if kind == "flatten":
        return (int(np.prod(in_shape)),)

    if len(in_shape) != 3:
        raise StructuralError(f"{kind} layer needs a [C,H,W] input, got {in_shape}")
    c, h, w = in_shape
    if kind == "lrn":
        return in_shape
    if kind == "gap":
        return (c,)
    if kind == "inception":
        if layer.inception is None:
            raise StructuralError("inception layer without block widths")
        return (layer.inception.out_channels, h, w)

    ho = F.output_extent(h, layer.kernel, layer.stride, layer.pad)
    wo = F.output_extent(w, layer.kernel, layer.stride, layer.pad)
    return (layer.out_channels if kind == "conv" else c, ho, wo)


@dataclass(frozen=True)
class NetSpec:
    """Ordered layer descriptors, input shape [C,H,W] and class count."""
    name: str
    input_shape: Shape
    layers: Tuple[LayerSpec, ...]
    class_count: int = 2

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Check the shape chain and the final logit width.

        Raises:
            StructuralError: On the first layer whose declared shapes break the chain
        """
        shape = tuple(self.input_shape)
        for i, layer in enumerate(self.layers):
            if tuple(layer.in_shape) != shape:
                raise StructuralError(
                    f"{self.name}: layer {i} ({layer.kind}) declares input {tuple(layer.in_shape)} "
                    f"but its predecessor produces {shape}"
                )
            produced = infer_output_shape(layer, shape)
            if tuple(layer.out_shape) != produced:
                raise StructuralError(
                    f"{self.name}: layer {i} ({layer.kind}) declares output "
                    f"{tuple(layer.out_shape)} but computes {produced}"
                )
            shape = produced
        if shape != (self.class_count,):
            raise StructuralError(
                f"{self.name}: final layer emits {shape}, expected ({self.class_count},) logits"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetSpec":
        return cls(
            name=data["name"],
            input_shape=tuple(data["input_shape"]),
            layers=tuple(LayerSpec.from_dict(d) for d in data["layers"]),
            class_count=int(data.get("class_count", 2)),
        )


@dataclass
class _SpecBuilder:
    """Appends layers while tracing shapes, so builders never spell shapes by hand."""
    name: str
    input_shape: Shape
    layers: List[LayerSpec] = field(default_factory=list)

    @property
    def shape(self) -> Shape:
        return self.layers[-1].out_shape if self.layers else tuple(self.input_shape)

    def add(self, kind: str, **kwargs: Any) -> "_SpecBuilder":
        draft = LayerSpec(kind=kind, in_shape=self.shape, out_shape=(), **kwargs)
        self.layers.append(replace(draft, out_shape=infer_output_shape(draft, self.shape)))
        return self

    def conv(self, out_channels: int, kernel: int, stride: int = 1, pad: int = 0) -> "_SpecBuilder":
        return self.add("conv", out_channels=out_channels, kernel=kernel, stride=stride, pad=pad)

    def pool(self, window: int, stride: int) -> "_SpecBuilder":
        return self.add("pool", kernel=window, stride=stride)

    def relu(self) -> "_SpecBuilder":
        return self.add("relu")

    def lrn(self, enabled: bool = True) -> "_SpecBuilder":
        return self.add("lrn") if enabled else self

    def flatten(self) -> "_SpecBuilder":
        return self.add("flatten")

    def fc(self, width: int) -> "_SpecBuilder":
        return self.add("fc", out_channels=width)

    def dropout(self, rate: float) -> "_SpecBuilder":
        return self.add("dropout", rate=rate) if rate > 0 else self

    def gap(self) -> "_SpecBuilder":
        return self.add("gap")

    def inception(self, block: InceptionBlockSpec) -> "_SpecBuilder":
        return self.add("inception", inception=block)

    def build(self, class_count: int = 2) -> NetSpec:
        return NetSpec(self.name, tuple(self.input_shape), tuple(self.layers), class_count)


def build_mini_alexnet(
    input_shape: Shape = (1, 64, 64), use_lrn: bool = True, dropout_rate: float = 0.5
) -> NetSpec:
    """Desk-scale AlexNet: 5 conv layers, 3 max pools, FC(256) -> FC(2)."""
    b = _SpecBuilder("mini-alexnet", tuple(input_shape))
    b.conv(16, 5, pad=2).relu().lrn(use_lrn).pool(2, 2)
    b.conv(32, 5, pad=2).relu().lrn(use_lrn).pool(2, 2)
    b.conv(64, 3, pad=1).relu()
    b.conv(64, 3, pad=1).relu()
    b.conv(32, 3, pad=1).relu().pool(2, 2)
    b.flatten().fc(256).relu().dropout(dropout_rate)
    b.fc(2)
    return b.build()


def build_full_alexnet(
    input_shape: Shape = (1, 256, 256), use_lrn: bool = True, dropout_rate: float = 0.5
) -> NetSpec:
    """Canonical AlexNet topology on 256x256 grayscale with a 2-class head."""
    b = _SpecBuilder("full-alexnet", tuple(input_shape))
    b.conv(96, 11, stride=4).relu().lrn(use_lrn).pool(3, 2)
    b.conv(256, 5, pad=2).relu().lrn(use_lrn).pool(3, 2)
    b.conv(384, 3, pad=1).relu()
    b.conv(384, 3, pad=1).relu()
    b.conv(256, 3, pad=1).relu().pool(3, 2)
    b.flatten().fc(4096).relu().dropout(dropout_rate)
    b.fc(4096).relu().dropout(dropout_rate)
    b.fc(2)
    return b.build()


MINI_INCEPTION_BLOCKS = (
    InceptionBlockSpec(c1=8, c3_reduce=8, c3=12, c5_reduce=4, c5=6, pool_proj=6),
    InceptionBlockSpec(c1=16, c3_reduce=16, c3=24, c5_reduce=8, c5=12, pool_proj=12),
)


def build_mini_inception_net(input_shape: Shape = (1, 64, 64)) -> NetSpec:
    """Stem conv -> inception(32) -> pool -> inception(64) -> global avg pool -> FC(2)."""
    first, second = MINI_INCEPTION_BLOCKS
    b = _SpecBuilder("mini-inception", tuple(input_shape))
    b.conv(16, 5, pad=2).relu().pool(2, 2)
    b.inception(first).pool(2, 2)
    b.inception(second)
    b.gap().fc(2)
    return b.build()


ARCHITECTURES: Dict[str, Callable[..., NetSpec]] = {
    "mini-alexnet": build_mini_alexnet,
    "mini-inception": build_mini_inception_net,
    "full-alexnet": build_full_alexnet,
}


def build_architecture(name: str, **options: Any) -> NetSpec:
    """Build a named architecture.

    Raises:
        ConfigurationError: If the name is unknown (message lists valid names)
    """
    try:
        builder = ARCHITECTURES[name]
    except KeyError:
        valid = ", ".join(sorted(ARCHITECTURES))
        raise ConfigurationError(f"Unknown architecture {name!r}; valid options: {valid}") from None
    return builder(**options)


def _make_layer(layer: LayerSpec, rng: np.random.Generator, dtype: np.dtype) -> Layer:
    kind = layer.kind
    if kind == "conv":
        return Conv2D(layer.in_shape[0], layer.out_channels, layer.kernel,
                      layer.stride, layer.pad, rng=rng, dtype=dtype)
    if kind == "pool":
        return MaxPool2D(layer.kernel, layer.stride, layer.pad)
    if kind == "relu":
        return ReLU()
    if kind == "lrn":
        return LocalResponseNorm()
    if kind == "flatten":
        return Flatten()
    if kind == "fc":
        return FullyConnected(layer.in_shape[0], layer.out_channels, rng=rng, dtype=dtype)
    if kind == "dropout":
        return Dropout(layer.rate)
    if kind == "gap":
        return GlobalAvgPool()
    assert layer.inception is not None
    block = layer.inception
    return Inception(layer.in_shape[0], block.c1, block.c3_reduce, block.c3,
                     block.c5_reduce, block.c5, block.pool_proj, rng=rng, dtype=dtype)


class Network:
    """Trainable instance of a NetSpec.

    Single-writer: forward/backward/update must be serialized by the caller.
    `infer` and `predict_proba` never write layer state.
    """

    def __init__(self, spec: NetSpec, seed: int = 0, dtype: np.dtype = np.float32) -> None:
        self.spec = spec
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.body = Sequential([_make_layer(layer, rng, self.dtype) for layer in spec.layers])

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            expected = "x".join(str(d) for d in self.spec.input_shape)
            raise StructuralError(
                f"{self.spec.name} expects input [N,{','.join(map(str, self.spec.input_shape))}] "
                f"({expected}), got {tuple(x.shape)}"
            )
        return x.astype(self.dtype, copy=False)

    def forward(
        self,
        x: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        logits = self.body.forward(self._check_input(x), training, rng)
        return F.check_finite(f"{self.spec.name} logits", logits)

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        return self.body.backward(grad_logits.astype(self.dtype, copy=False))

    def infer(self, x: np.ndarray) -> np.ndarray:
        return F.check_finite(f"{self.spec.name} logits", self.body.infer(self._check_input(x)))

    def predict_proba(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Probability of the diagnostic class (logit index 1) per sample."""
        scores = [
            softmax(self.infer(x[start:start + batch_size]))[:, 1]
            for start in range(0, len(x), batch_size)
        ]
        return np.concatenate(scores) if scores else np.zeros(0)

    def parameters(self) -> List[LayerParams]:
        return self.body.params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state(self) -> List[np.ndarray]:
        """Copies of every persistent tensor, in checkpoint order."""
        return [t.copy() for p in self.parameters() for _, t in p.tensors()]

    def load_state(self, tensors: Sequence[np.ndarray]) -> None:
        """Overwrite weights and biases; velocities and gradients are reset.

        Raises:
            StructuralError: If the tensor list doesn't match this network
        """
        targets = [(p, name) for p in self.parameters() for name, _ in p.tensors()]
        if len(tensors) != len(targets):
            raise StructuralError(
                f"{self.spec.name} has {len(targets)} tensors, got {len(tensors)}"
            )
        for (param, name), value in zip(targets, tensors):
            current = getattr(param, name)
            if current.shape != value.shape:
                raise StructuralError(
                    f"{self.spec.name}: tensor shape {value.shape} != expected {current.shape}"
                )
            current[...] = value
        for p in self.parameters():
            p.zero_grad()
            p.velocity_weights[...] = 0
            p.velocity_bias[...] = 0
