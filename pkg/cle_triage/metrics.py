"""
Evaluation metrics

Diagnostic is the positive class. Every function here is pure and works on
ScoredItems, so CNN scores and entropy scores go through the same code.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .config import get_config
from .errors import ValidationError
from .models import ScoredItem


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValidationError(f"confusion counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class MetricSet:
    """Accuracy, sensitivity and specificity; None marks a zero denominator."""
    accuracy: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]

    def to_dict(self) -> Dict[str, Optional[float]]:
        return {
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
        }


def _arrays(items: Sequence[ScoredItem]) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.array([item.score for item in items], dtype=np.float64)
    positive = np.array([item.positive for item in items], dtype=bool)
    return scores, positive


def classify_at_threshold(items: Sequence[ScoredItem], threshold: float) -> ConfusionCounts:
    """Predict diagnostic iff score >= threshold and count against the truth.

    Raises:
        ValidationError: If items is empty or threshold is outside [0, 1]
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold {threshold} outside [0, 1]")
    if not items:
        raise ValidationError("cannot classify an empty item list")
    scores, positive = _arrays(items)
    predicted = scores >= threshold
    return ConfusionCounts(
        tp=int(np.sum(predicted & positive)),
        fp=int(np.sum(predicted & ~positive)),
        tn=int(np.sum(~predicted & ~positive)),
        fn=int(np.sum(~predicted & positive)),
    )


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


def metrics(counts: ConfusionCounts) -> MetricSet:
    return MetricSet(
        accuracy=_ratio(counts.tp + counts.tn, counts.total),
        sensitivity=_ratio(counts.tp, counts.tp + counts.fn),
        specificity=_ratio(counts.tn, counts.tn + counts.fp),
    )


@dataclass(frozen=True)
class RocCurve:
    """(FPR, TPR) points in sweep order, the threshold of each point, and the AUC.

    Thresholds run from +inf down to -inf; the mean curve has none (NaN).
    """
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def __len__(self) -> int:
        return len(self.fpr)


def _require_both_classes(positive: np.ndarray) -> Tuple[int, int]:
    n_pos = int(positive.sum())
    n_neg = int(positive.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValidationError(
            f"ROC needs both classes; got {n_pos} diagnostic and {n_neg} nondiagnostic items"
        )
    return n_pos, n_neg


def roc_curve(items: Sequence[ScoredItem]) -> RocCurve:
    """Sweep every distinct score (plus sentinels) and integrate by trapezoids.

    Raises:
        ValidationError: If the items don't contain both classes
    """
    scores, positive = _arrays(items)
    n_pos, n_neg = _require_both_classes(positive)

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_positive = positive[order]
    # last position of each run of equal scores, in descending score order
    run_ends = np.append(np.flatnonzero(np.diff(sorted_scores) != 0), len(sorted_scores) - 1)

    tp = np.cumsum(sorted_positive)[run_ends]
    fp = np.cumsum(~sorted_positive)[run_ends]
    tpr = np.concatenate(([0.0], tp / n_pos, [1.0]))
    fpr = np.concatenate(([0.0], fp / n_neg, [1.0]))
    thresholds = np.concatenate(([np.inf], sorted_scores[run_ends], [-np.inf]))
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=auc)


def rank_sum_auc(items: Sequence[ScoredItem]) -> float:
    """AUC as the Mann-Whitney U statistic normalised by n_pos * n_neg (ties count 1/2)."""
    scores, positive = _arrays(items)
    n_pos, n_neg = _require_both_classes(positive)
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _upper_envelope(curve: RocCurve) -> Tuple[np.ndarray, np.ndarray]:
    """Unique FPR values with the highest TPR reached at each."""
    fpr, inverse = np.unique(curve.fpr, return_inverse=True)
    tpr = np.zeros(len(fpr))
    np.maximum.at(tpr, inverse, curve.tpr)
    return fpr, tpr


def mean_roc(curves: Sequence[RocCurve], grid_points: Optional[int] = None) -> RocCurve:
    """Vertical average: TPR interpolated on a fixed FPR grid, averaged over curves.

    The mean AUC is the mean of the curves' AUCs.

    Raises:
        ValidationError: If no curves are given
    """
    if not curves:
        raise ValidationError("mean_roc needs at least one curve")
    grid_points = grid_points or get_config().MEAN_ROC_GRID_POINTS
    grid = np.linspace(0.0, 1.0, grid_points)
    stacked = []
    for curve in curves:
        fpr, tpr = _upper_envelope(curve)
        stacked.append(np.interp(grid, fpr, tpr))
    mean_tpr = np.mean(stacked, axis=0)
    fpr = np.concatenate(([0.0], grid))
    tpr = np.concatenate(([0.0], mean_tpr))
    auc = float(np.mean([curve.auc for curve in curves]))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=np.full(len(fpr), np.nan), auc=auc)


def best_accuracy_threshold(items: Sequence[ScoredItem]) -> Tuple[float, float]:
    """Threshold among the observed scores that maximizes accuracy.

    Ties go to the lowest threshold.

    Returns:
        (threshold, accuracy)
    """
    if not items:
        raise ValidationError("cannot pick a threshold from an empty item list")
    scores, positive = _arrays(items)
    candidates = np.unique(scores)
    n_neg = int((~positive).sum())
    order = np.sort(scores[positive])
    neg_sorted = np.sort(scores[~positive])
    # items with score >= t are predicted diagnostic
    tp = len(order) - np.searchsorted(order, candidates, side="left")
    fp = len(neg_sorted) - np.searchsorted(neg_sorted, candidates, side="left")
    accuracy = (tp + (n_neg - fp)) / len(scores)
    best = int(np.argmax(accuracy))
    return float(candidates[best]), float(accuracy[best])
