"""
Stateful layers

Each layer wraps a kernel pair from `functional`, caching what backward needs
during `forward`. `infer` runs the same computation without touching the
cache, so an inference-only network can be shared by concurrent readers.
"""

from abc import ABC, abstractmethod
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import UsageError
from . import functional as F
from .params import LayerParams


class Layer(ABC):
    """Base class: forward caches, infer doesn't, backward consumes the cache."""

    kind: str = "layer"

    def __init__(self) -> None:
        self._cache: Any = None

    @abstractmethod
    def _forward(
        self, x: np.ndarray, training: bool, rng: Optional[np.random.Generator]
    ) -> Tuple[np.ndarray, Any]:
        """Return (output, cache)."""

    @abstractmethod
    def _backward(self, grad_out: np.ndarray, cache: Any) -> np.ndarray:
        """Return dL/dinput, accumulating parameter gradients."""

    def forward(
        self,
        x: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        out, self._cache = self._forward(x, training, rng)
        return out

    def infer(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x, False, None)[0]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise UsageError(f"{self.kind}: backward called before forward")
        grad_in = self._backward(grad_out, self._cache)
        self._cache = None
        return grad_in

    @property
    def params(self) -> List[LayerParams]:
        return []


class Conv2D(Layer):
    kind = "conv"

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        pad: int = 0,
        rng: Optional[np.random.Generator] = None,
        dtype: np.dtype = np.float32,
    ) -> None:
        super().__init__()
        self.stride = stride
        self.pad = pad
        rng = rng if rng is not None else np.random.default_rng(0)
        self.param = LayerParams.he_normal(
            (out_channels, in_channels, kernel, kernel), in_channels * kernel * kernel, rng, dtype
        )

    def _forward(self, x, training, rng):
        out, cols = F.conv2d_forward_cols(x, self.param, self.stride, self.pad)
        return out, (x, cols)

    def _backward(self, grad_out, cache):
        x, cols = cache
        return F.conv2d_backward(grad_out, x, self.param, self.stride, self.pad, cols=cols)

    @property
    def params(self) -> List[LayerParams]:
        return [self.param]


class MaxPool2D(Layer):
    kind = "pool"

    def __init__(self, window: int, stride: int, pad: int = 0) -> None:
        super().__init__()
        self.window = window
        self.stride = stride
        self.pad = pad

    def _forward(self, x, training, rng):
        return F.maxpool_forward(x, self.window, self.stride, self.pad)

    def _backward(self, grad_out, cache):
        return F.maxpool_backward(grad_out, cache)


class ReLU(Layer):
    kind = "relu"

    def _forward(self, x, training, rng):
        return F.relu(x), x

    def _backward(self, grad_out, cache):
        return F.relu_backward(grad_out, cache)


class LocalResponseNorm(Layer):
    kind = "lrn"

    def __init__(
        self, depth_radius: int = 2, k: float = 2.0, alpha: float = 1e-4, beta: float = 0.75
    ) -> None:
        super().__init__()
        self.depth_radius = depth_radius
        self.k = k
        self.alpha = alpha
        self.beta = beta

    def _forward(self, x, training, rng):
        out = F.lrn_forward(x, self.depth_radius, self.k, self.alpha, self.beta)
        return out, x

    def _backward(self, grad_out, cache):
        return F.lrn_backward(grad_out, cache, self.depth_radius, self.k, self.alpha, self.beta)


class Flatten(Layer):
    kind = "flatten"

    def _forward(self, x, training, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def _backward(self, grad_out, cache):
        return grad_out.reshape(cache)


class FullyConnected(Layer):
    kind = "fc"

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: Optional[np.random.Generator] = None,
        dtype: np.dtype = np.float32,
    ) -> None:
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.param = LayerParams.he_normal((out_features, in_features), in_features, rng, dtype)

    def _forward(self, x, training, rng):
        return F.fully_connected_forward(x, self.param), x

    def _backward(self, grad_out, cache):
        return F.fully_connected_backward(grad_out, cache, self.param)

    @property
    def params(self) -> List[LayerParams]:
        return [self.param]


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float) -> None:
        super().__init__()
        F.dropout(np.zeros(1, dtype=np.float32), rate, training=False)  # validates rate
        self.rate = rate

    def _forward(self, x, training, rng):
        out, mask = F.dropout(x, self.rate, training, rng)
        # a None mask is the identity; keep a non-None cache so backward is allowed
        return out, (mask,)

    def _backward(self, grad_out, cache):
        return F.dropout_backward(grad_out, cache[0])


class GlobalAvgPool(Layer):
    kind = "gap"

    def _forward(self, x, training, rng):
        return F.global_avg_pool_forward(x), x.shape

    def _backward(self, grad_out, cache):
        return F.global_avg_pool_backward(grad_out, cache)


class Sequential(Layer):
    """Layers applied in order; backward runs them in reverse."""

    kind = "sequential"

    def __init__(self, layers: Sequence[Layer]) -> None:
        super().__init__()
        self.layers = list(layers)

    def _forward(self, x, training, rng):
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        return x, True

    def infer(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.infer(x)
        return x

    def _backward(self, grad_out, cache):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    @property
    def params(self) -> List[LayerParams]:
        return [p for layer in self.layers for p in layer.params]


class Inception(Layer):
    """Four parallel branches concatenated on channels, all preserving H and W.

    1x1 conv | 1x1 reduce -> 3x3 conv | 1x1 reduce -> 5x5 conv | 3x3 maxpool -> 1x1 proj
    """

    kind = "inception"

    def __init__(
        self,
        in_channels: int,
        c1: int,
        c3_reduce: int,
        c3: int,
        c5_reduce: int,
        c5: int,
        pool_proj: int,
        rng: Optional[np.random.Generator] = None,
        dtype: np.dtype = np.float32,
    ) -> None:
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.widths = (c1, c3, c5, pool_proj)
        self.branches = [
            Sequential([Conv2D(in_channels, c1, 1, rng=rng, dtype=dtype), ReLU()]),
            Sequential([
                Conv2D(in_channels, c3_reduce, 1, rng=rng, dtype=dtype), ReLU(),
                Conv2D(c3_reduce, c3, 3, pad=1, rng=rng, dtype=dtype), ReLU(),
            ]),
            Sequential([
                Conv2D(in_channels, c5_reduce, 1, rng=rng, dtype=dtype), ReLU(),
                Conv2D(c5_reduce, c5, 5, pad=2, rng=rng, dtype=dtype), ReLU(),
            ]),
            Sequential([
                MaxPool2D(3, 1, pad=1),
                Conv2D(in_channels, pool_proj, 1, rng=rng, dtype=dtype), ReLU(),
            ]),
        ]

    def _forward(self, x, training, rng):
        outs = [branch.forward(x, training, rng) for branch in self.branches]
        return F.concat_channels(outs), True

    def infer(self, x: np.ndarray) -> np.ndarray:
        return F.concat_channels([branch.infer(x) for branch in self.branches])

    def _backward(self, grad_out, cache):
        parts = F.split_channels(grad_out, self.widths)
        grad_in = None
        for branch, part in zip(self.branches, parts):
            g = branch.backward(part)
            grad_in = g if grad_in is None else grad_in + g
        return grad_in

    @property
    def params(self) -> List[LayerParams]:
        return [p for branch in self.branches for p in branch.params]
