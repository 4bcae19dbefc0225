"""
Stratified fold assignment and the per-fold train/validation/test plan.

Per class: shuffle with the seed, then cut into k folds of floor(n/k) with the
n mod k remainder going to the LAST folds. Within a fold's non-test portion
one quarter (rounded half up) is held out for validation, per class.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ValidationError
from .models import DatasetManifest, Label

SeedLike = Union[int, Sequence[int]]


def _as_labels(labels: Sequence[Union[Label, str]]) -> List[Label]:
    return [Label.parse(label) for label in labels]


def _fold_sizes(n: int, k: int) -> List[int]:
    base, remainder = divmod(n, k)
    return [base] * (k - remainder) + [base + 1] * remainder


def stratified_kfold(
    labels: Sequence[Union[Label, str]],
    k: int = 4,
    seed: int = 0,
    groups: Optional[Sequence[Optional[str]]] = None,
) -> np.ndarray:
    """Assign every item to one of k folds, preserving class proportions.

    Args:
        labels: Label per item
        k: Number of folds (>= 2)
        seed: Shuffle seed
        groups: Optional group id per item (e.g. patient); a group never spans folds

    Returns:
        int64 array of fold indices 0..k-1, aligned with `labels`

    Raises:
        ValidationError: If k < 2 or a class (or the group count) is smaller than k
    """
    if k < 2:
        raise ValidationError(f"k must be at least 2, got {k}")
    parsed = _as_labels(labels)
    if groups is not None:
        return _grouped_kfold(parsed, list(groups), k, seed)

    rng = np.random.default_rng(seed)
    folds = np.full(len(parsed), -1, dtype=np.int64)
    label_array = np.array([label.value for label in parsed])
    for label in Label:
        members = np.flatnonzero(label_array == label.value)
        if len(members) < k:
            raise ValidationError(
                f"class {label.value} has {len(members)} items, fewer than k={k} folds"
            )
        shuffled = rng.permutation(members)
        start = 0
        for fold, size in enumerate(_fold_sizes(len(shuffled), k)):
            folds[shuffled[start:start + size]] = fold
            start += size
    return folds


def _grouped_kfold(labels: List[Label], groups: List[Optional[str]], k: int, seed: int) -> np.ndarray:
    if len(groups) != len(labels):
        raise ValidationError(f"{len(groups)} group ids for {len(labels)} items")
    missing = sum(1 for g in groups if g is None)
    if missing:
        raise ValidationError(f"{missing} items have no group id; patient-level splits need one per item")

    members: Dict[str, List[int]] = {}
    for index, group in enumerate(groups):
        members.setdefault(str(group), []).append(index)
    if len(members) < k:
        raise ValidationError(f"{len(members)} groups cannot fill k={k} folds")

    names = sorted(members)
    order = np.random.default_rng(seed).permutation(len(names))
    shuffled = [names[i] for i in order]
    # largest groups first; stable sort keeps the shuffle among equal sizes
    shuffled.sort(key=lambda name: -len(members[name]))

    class_totals = np.array(
        [max(1, sum(1 for label in labels if label is c)) for c in Label], dtype=np.float64
    )
    load = np.zeros((k, len(Label)), dtype=np.float64)
    folds = np.full(len(labels), -1, dtype=np.int64)
    for name in shuffled:
        counts = np.array(
            [sum(1 for i in members[name] if labels[i] is c) for c in Label], dtype=np.float64
        )
        cost = ((load + counts) / class_totals).max(axis=1)
        fold = int(np.argmin(cost))
        load[fold] += counts
        folds[members[name]] = fold
    return folds


def train_val_split(
    indices: Sequence[int],
    labels: Sequence[Union[Label, str]],
    seed: SeedLike = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Stratified 3:1 split of a fold's non-test indices.

    Per class, val = round-half-up(n / 4) = (n + 2) // 4 and train gets the rest.

    Args:
        indices: Non-test item indices
        labels: Labels of the whole dataset (indexed by `indices`)
        seed: Shuffle seed

    Returns:
        (train, val) sorted int64 index arrays

    Raises:
        ValidationError: If `indices` is empty or lacks a class
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ValidationError("train_val_split needs at least one index")
    parsed = _as_labels(labels)
    rng = np.random.default_rng(seed)
    train_parts, val_parts = [], []
    for label in Label:
        members = np.array([i for i in indices if parsed[i] is label], dtype=np.int64)
        if members.size == 0:
            raise ValidationError(f"no {label.value} items in the non-test portion")
        shuffled = rng.permutation(members)
        n_val = (len(shuffled) + 2) // 4
        val_parts.append(shuffled[:n_val])
        train_parts.append(shuffled[n_val:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(val_parts))


@dataclass(frozen=True)
class FoldPlan:
    """Index sets of one cross-validation experiment."""
    fold: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def fold_split(
    folds: np.ndarray, labels: Sequence[Union[Label, str]], fold: int, seed: int = 0
) -> FoldPlan:
    """Test = the fold's items; the rest is split 3:1 into train and validation."""
    folds = np.asarray(folds)
    test = np.flatnonzero(folds == fold)
    if test.size == 0:
        raise ValidationError(f"fold {fold} has no items")
    train, val = train_val_split(np.flatnonzero(folds != fold), labels, seed=[seed, fold])
    return FoldPlan(fold=fold, train=train, val=val, test=test)


def fold_plans(folds: np.ndarray, labels: Sequence[Union[Label, str]], seed: int = 0) -> List[FoldPlan]:
    k = int(np.max(folds)) + 1
    return [fold_split(folds, labels, fold, seed) for fold in range(k)]


@dataclass(frozen=True)
class SplitCounts:
    """Per-class image counts of one fold, laid out like a train/val/test count table."""
    fold: int
    train: Dict[str, int]
    val: Dict[str, int]
    test: Dict[str, int]

    def to_dict(self) -> Dict[str, object]:
        return {"fold": self.fold, "train": self.train, "val": self.val, "test": self.test}


def _class_counts(indices: np.ndarray, labels: List[Label]) -> Dict[str, int]:
    counts = {label.value: 0 for label in Label}
    for i in indices:
        counts[labels[i].value] += 1
    return counts


def counts_for_plans(plans: Sequence[FoldPlan], labels: Sequence[Union[Label, str]]) -> List[SplitCounts]:
    parsed = _as_labels(labels)
    return [
        SplitCounts(
            fold=plan.fold,
            train=_class_counts(plan.train, parsed),
            val=_class_counts(plan.val, parsed),
            test=_class_counts(plan.test, parsed),
        )
        for plan in plans
    ]


def split_counts(
    labels: Sequence[Union[Label, str]],
    k: int = 4,
    seed: int = 0,
    groups: Optional[Sequence[Optional[str]]] = None,
) -> List[SplitCounts]:
    """Train/val/test class counts of every fold for a fresh stratified assignment."""
    folds = stratified_kfold(labels, k=k, seed=seed, groups=groups)
    return counts_for_plans(fold_plans(folds, labels, seed), labels)


def assign_folds(
    manifest: DatasetManifest, k: int = 4, seed: int = 0, patient_level: bool = False
) -> DatasetManifest:
    """Return a copy of `manifest` with freshly assigned folds."""
    groups = [r.patient for r in manifest.records] if patient_level else None
    folds = stratified_kfold(manifest.labels, k=k, seed=seed, groups=groups)
    updated = manifest.with_folds(folds.tolist())
    updated.meta.update({"k": k, "split_seed": seed, "patient_level": patient_level})
    return updated
