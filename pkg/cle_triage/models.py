"""
Data Models for CLE Triage

Shared records passed between the data pipeline, trainer, metrics and CLI:
labels, scored items, and the JSON-lines dataset manifest.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .config import Constants
from .errors import ValidationError


class Label(str, Enum):
    """Frame label. Diagnostic is the positive class."""
    DIAGNOSTIC = "diagnostic"
    NONDIAGNOSTIC = "nondiagnostic"

    @property
    def class_index(self) -> int:
        """Logit index of this label (1 = diagnostic)."""
        return 1 if self is Label.DIAGNOSTIC else 0

    @property
    def is_positive(self) -> bool:
        return self is Label.DIAGNOSTIC

    @classmethod
    def parse(cls, value: Any) -> "Label":
        try:
            return cls(value)
        except ValueError as e:
            raise ValidationError(
                f"Unknown label {value!r}; expected 'diagnostic' or 'nondiagnostic'"
            ) from e


@dataclass(frozen=True)
class ScoredItem:
    """A classifier score (probability of being diagnostic) with its ground truth."""
    score: float
    truth: Label

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"Score {self.score!r} outside [0, 1]")

    @property
    def positive(self) -> bool:
        return self.truth.is_positive


def scored_items(scores: Sequence[float], labels: Sequence[Label]) -> List[ScoredItem]:
    """Zip parallel score/label sequences into ScoredItems."""
    if len(scores) != len(labels):
        raise ValidationError(
            f"{len(scores)} scores but {len(labels)} labels"
        )
    return [ScoredItem(float(s), Label.parse(l)) for s, l in zip(scores, labels)]


@dataclass
class ManifestRecord:
    """One manifest line: image path, label, fold (and optional extras)."""
    path: str
    label: Label
    fold: Optional[int] = None
    patient: Optional[str] = None
    subclass: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"path": self.path, "label": self.label.value, "fold": self.fold}
        if self.patient is not None:
            data["patient"] = self.patient
        if self.subclass is not None:
            data["subclass"] = self.subclass
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ManifestRecord":
        if not isinstance(data, dict) or "path" not in data or "label" not in data:
            raise ValidationError(f"Manifest record missing 'path' or 'label': {data}")
        fold = data.get("fold")
        return cls(
            path=str(data["path"]),
            label=Label.parse(data["label"]),
            fold=None if fold is None else int(fold),
            patient=data.get("patient"),
            subclass=data.get("subclass"),
        )


@dataclass
class DatasetManifest:
    """
    Records of (image path, label, fold) plus dataset-level metadata.

    Paths are stored relative to `root` (the manifest's directory) when
    possible, so a dataset directory can be moved as a whole.
    """
    records: List[ManifestRecord]
    meta: Dict[str, Any] = field(default_factory=dict)
    root: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        seen = set()
        for record in self.records:
            if record.path in seen:
                raise ValidationError(f"Duplicate manifest path: {record.path}")
            seen.add(record.path)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> List[Label]:
        return [r.label for r in self.records]

    @property
    def k(self) -> int:
        """Number of folds the manifest is assigned to."""
        folds = self.folds()
        return int(folds.max()) + 1

    def folds(self) -> np.ndarray:
        """Fold index per record.

        Raises:
            ValidationError: If any record has no fold assignment
        """
        missing = [r.path for r in self.records if r.fold is None]
        if missing:
            raise ValidationError(
                f"{len(missing)} manifest records have no fold (first: {missing[0]}); "
                "run 'cle-triage split --write' first"
            )
        return np.array([r.fold for r in self.records], dtype=np.int64)

    def resolve(self, record: ManifestRecord) -> Path:
        """Absolute path of a record's image."""
        path = Path(record.path)
        return path if path.is_absolute() else self.root / path

    def with_folds(self, folds: Iterable[int]) -> "DatasetManifest":
        """Copy of the manifest with new fold assignments."""
        folds = list(folds)
        if len(folds) != len(self.records):
            raise ValidationError(
                f"{len(folds)} fold assignments for {len(self.records)} records"
            )
        records = [
            ManifestRecord(r.path, r.label, int(f), r.patient, r.subclass)
            for r, f in zip(self.records, folds)
        ]
        return DatasetManifest(records, dict(self.meta), self.root)

    def save(self, path: Path) -> None:
        """Write the manifest as JSON lines, plus dataset_meta.json next to it.

        Args:
            path: Manifest file path

        Raises:
            OSError: If files cannot be written
        """
        path = Path(path)
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        path.write_text("\n".join(lines) + "\n")
        if self.meta:
            meta_path = path.parent / Constants.DATASET_META_NAME
            meta_path.write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path) -> "DatasetManifest":
        """Load a JSON-lines manifest (and dataset_meta.json if present).

        Args:
            path: Manifest file path

        Returns:
            DatasetManifest rooted at the manifest's directory

        Raises:
            FileNotFoundError: If the manifest doesn't exist
            ValidationError: If a line is not a valid record, or dataset_meta.json is malformed
        """
        path = Path(path)
        records = []
        for line_no, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{line_no}: invalid JSON ({e})") from e
            records.append(ManifestRecord.from_dict(data))

        meta: Dict[str, Any] = {}
        meta_path = path.parent / Constants.DATASET_META_NAME
        if meta_path.exists():
            try:
                meta = json.loads(meta_path.read_text())
            except json.JSONDecodeError as e:
                raise ValidationError(f"{meta_path}: invalid JSON ({e})") from e
            if not isinstance(meta, dict):
                raise ValidationError(f"{meta_path}: expected a JSON object")
        return cls(records=records, meta=meta, root=path.parent)

    def subset(self, indices: Iterable[int]) -> List[ManifestRecord]:
        return [self.records[i] for i in indices]

    def summary(self) -> Dict[str, Any]:
        counts = {label.value: 0 for label in Label}
        for record in self.records:
            counts[record.label.value] += 1
        return {"records": len(self.records), **counts}

