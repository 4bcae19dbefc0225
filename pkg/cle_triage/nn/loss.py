"""
Softmax and the softmax cross-entropy loss with its analytic gradient.
"""

from dataclasses import dataclass

import numpy as np

from ..config import get_config
from ..errors import StructuralError, ValidationError
from .functional import check_finite


@dataclass(frozen=True)
class LossValue:
    """Mean loss over the batch (nats) and its gradient w.r.t. the logits."""
    value: float
    gradient: np.ndarray


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax in float64, max-subtracted for overflow safety."""
    z = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def one_hot(class_indices: np.ndarray, num_classes: int) -> np.ndarray:
    targets = np.zeros((len(class_indices), num_classes), dtype=np.float64)
    targets[np.arange(len(class_indices)), class_indices] = 1.0
    return targets


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> LossValue:
    """L = -(1/N) sum_n sum_k t_k^n log softmax(y^n)_k, gradient (softmax(y) - t) / N.

    Args:
        logits: [N, C] scores
        targets: [N, C] one-hot rows

    Raises:
        StructuralError: If shapes differ
        ValidationError: If a target row is not one-hot
    """
    if logits.ndim != 2 or logits.shape != targets.shape:
        raise StructuralError(
            f"logits shape {logits.shape} and targets shape {targets.shape} must be equal [N,C]"
        )
    t = np.asarray(targets, dtype=np.float64)
    is_binary = np.isin(t, (0.0, 1.0)).all()
    if not is_binary or not np.array_equal(t.sum(axis=1), np.ones(len(t))):
        raise ValidationError("targets must be one-hot rows")

    n = logits.shape[0]
    probs = softmax(logits)
    clamped = np.clip(probs, get_config().PROB_CLAMP, 1.0)
    value = float(-(t * np.log(clamped)).sum() / n)
    gradient = ((probs - t) / n).astype(logits.dtype)
    check_finite("softmax_cross_entropy gradient", gradient)
    return LossValue(value=value, gradient=gradient)
