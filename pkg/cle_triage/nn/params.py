"""
Layer parameters: weights, bias, their gradient accumulators and momentum buffers.
"""

from dataclasses import dataclass, field
from typing import Iterator, Tuple

import numpy as np

from ..errors import StructuralError


@dataclass
class LayerParams:
    """Trainable tensors of one layer.

    Gradient and velocity buffers always have the shapes of the tensor they
    belong to; `check()` enforces it.
    """
    weights: np.ndarray
    bias: np.ndarray
    grad_weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    grad_bias: np.ndarray = field(default=None)  # type: ignore[assignment]
    velocity_weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    velocity_bias: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.grad_weights is None:
            self.grad_weights = np.zeros_like(self.weights)
        if self.grad_bias is None:
            self.grad_bias = np.zeros_like(self.bias)
        if self.velocity_weights is None:
            self.velocity_weights = np.zeros_like(self.weights)
        if self.velocity_bias is None:
            self.velocity_bias = np.zeros_like(self.bias)
        self.check()

    @classmethod
    def he_normal(
        cls,
        weight_shape: Tuple[int, ...],
        fan_in: int,
        rng: np.random.Generator,
        dtype: np.dtype = np.float32,
    ) -> "LayerParams":
        """Zero-mean Gaussian weights with std sqrt(2 / fan_in), zero bias."""
        std = np.sqrt(2.0 / fan_in)
        weights = (rng.standard_normal(weight_shape) * std).astype(dtype)
        bias = np.zeros(weight_shape[0], dtype=dtype)
        return cls(weights=weights, bias=bias)

    def check(self) -> None:
        for name, buf in (("grad_weights", self.grad_weights),
                          ("velocity_weights", self.velocity_weights)):
            if buf.shape != self.weights.shape:
                raise StructuralError(
                    f"{name} shape {buf.shape} != weights shape {self.weights.shape}"
                )
        for name, buf in (("grad_bias", self.grad_bias),
                          ("velocity_bias", self.velocity_bias)):
            if buf.shape != self.bias.shape:
                raise StructuralError(
                    f"{name} shape {buf.shape} != bias shape {self.bias.shape}"
                )

    def zero_grad(self) -> None:
        self.grad_weights[...] = 0
        self.grad_bias[...] = 0

    def tensors(self) -> Iterator[Tuple[str, np.ndarray]]:
        """(name, array) pairs of the persistent tensors, in checkpoint order."""
        yield "weights", self.weights
        yield "bias", self.bias

    @property
    def size(self) -> int:
        return int(self.weights.size + self.bias.size)

    def astype(self, dtype: np.dtype) -> "LayerParams":
        """Copy with all buffers converted (used by float64 gradient checks)."""
        return LayerParams(
            weights=self.weights.astype(dtype),
            bias=self.bias.astype(dtype),
            grad_weights=self.grad_weights.astype(dtype),
            grad_bias=self.grad_bias.astype(dtype),
            velocity_weights=self.velocity_weights.astype(dtype),
            velocity_bias=self.velocity_bias.astype(dtype),
        )
