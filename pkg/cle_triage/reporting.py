"""
Run reports and their renderings

A RunReport holds per-fold and mean metrics for one model (CNN or entropy
baseline) at one or more decision thresholds. AUC is threshold-free, so it
is computed once per fold and shared by every threshold row. Wall-clock
numbers live under `timings`/`generated_at` and are left out of
`report_digest`, which is what "identical runs give identical reports" means.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import jsonschema
import numpy as np
from rich.table import Table

from .errors import ValidationError
from .metrics import (
    ConfusionCounts,
    RocCurve,
    classify_at_threshold,
    mean_roc,
    metrics,
    roc_curve,
)
from .models import ScoredItem

SCHEMA_PATH = Path(__file__).parent / "schemas" / "run_report.schema.json"
REPORT_VERSION = 1
VOLATILE_KEYS = ("timings", "generated_at")


@dataclass
class ThresholdMetrics:
    threshold: float
    accuracy: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]
    counts: Optional[Dict[str, int]] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "threshold": self.threshold,
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
        }
        if self.counts is not None:
            data["counts"] = self.counts
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ThresholdMetrics":
        return cls(
            threshold=data["threshold"],
            accuracy=data["accuracy"],
            sensitivity=data["sensitivity"],
            specificity=data["specificity"],
            counts=data.get("counts"),
        )


@dataclass
class FoldBlock:
    fold: int
    n_test: int
    auc: float
    metrics: List[ThresholdMetrics]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fold": self.fold,
            "n_test": self.n_test,
            "auc": self.auc,
            "metrics": [m.to_dict() for m in self.metrics],
        }


@dataclass
class MeanBlock:
    auc: float
    metrics: List[ThresholdMetrics]

    def to_dict(self) -> Dict[str, Any]:
        return {"auc": self.auc, "metrics": [m.to_dict() for m in self.metrics]}


@dataclass
class RunReport:
    """Per-fold and mean metrics of one model, plus config echo and timings."""
    model: str
    kind: str
    config: Dict[str, Any]
    folds: List[FoldBlock]
    mean: MeanBlock
    reference: Dict[str, Any] = field(default_factory=dict)
    skipped: int = 0
    timings: Dict[str, Any] = field(default_factory=dict)
    generated_at: str = field(default_factory=lambda: datetime.now().isoformat())

    @property
    def thresholds(self) -> List[float]:
        return [m.threshold for m in self.mean.metrics]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": REPORT_VERSION,
            "model": self.model,
            "kind": self.kind,
            "config": self.config,
            "folds": [f.to_dict() for f in self.folds],
            "mean": self.mean.to_dict(),
            "reference": self.reference,
            "skipped": self.skipped,
            "timings": self.timings,
            "generated_at": self.generated_at,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunReport":
        return cls(
            model=data["model"],
            kind=data["kind"],
            config=data.get("config", {}),
            folds=[
                FoldBlock(
                    fold=f["fold"],
                    n_test=f["n_test"],
                    auc=f["auc"],
                    metrics=[ThresholdMetrics.from_dict(m) for m in f["metrics"]],
                )
                for f in data["folds"]
            ],
            mean=MeanBlock(
                auc=data["mean"]["auc"],
                metrics=[ThresholdMetrics.from_dict(m) for m in data["mean"]["metrics"]],
            ),
            reference=data.get("reference", {}),
            skipped=data.get("skipped", 0),
            timings=data.get("timings", {}),
            generated_at=data.get("generated_at", ""),
        )

    def save(self, path: Path) -> None:
        """Validate against the shipped schema and write as JSON."""
        data = self.to_dict()
        validate_report(data)
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")

    @classmethod
    def load(cls, path: Path) -> "RunReport":
        data = json.loads(Path(path).read_text())
        validate_report(data)
        return cls.from_dict(data)


def load_schema() -> Dict[str, Any]:
    return json.loads(SCHEMA_PATH.read_text())


def validate_report(data: Dict[str, Any]) -> None:
    """Raises ValidationError if `data` doesn't match the RunReport schema."""
    try:
        jsonschema.validate(instance=data, schema=load_schema())
    except jsonschema.ValidationError as e:
        location = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ValidationError(f"report does not match schema at {location}: {e.message}") from e


def report_digest(report: RunReport) -> str:
    """SHA-256 of the report with wall-clock fields removed."""
    data = {k: v for k, v in report.to_dict().items() if k not in VOLATILE_KEYS}
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def threshold_metrics(items: Sequence[ScoredItem], threshold: float) -> ThresholdMetrics:
    counts: ConfusionCounts = classify_at_threshold(items, threshold)
    m = metrics(counts)
    return ThresholdMetrics(
        threshold=threshold,
        accuracy=m.accuracy,
        sensitivity=m.sensitivity,
        specificity=m.specificity,
        counts=counts.to_dict(),
    )


@dataclass
class Evaluation:
    """A report together with the ROC curves it was built from."""
    report: RunReport
    fold_curves: List[RocCurve]
    mean_curve: RocCurve


def build_report(
    model: str,
    kind: str,
    fold_items: Sequence[Sequence[ScoredItem]],
    thresholds: Sequence[float],
    config: Optional[Dict[str, Any]] = None,
    reference: Optional[Dict[str, Any]] = None,
    timings: Optional[Dict[str, Any]] = None,
    skipped: int = 0,
    fold_thresholds: Optional[Sequence[Sequence[float]]] = None,
) -> Evaluation:
    """Score every fold at every threshold and average the folds.

    Args:
        model: Display name
        kind: "cnn" or "entropy"
        fold_items: Test-fold scored items, one list per fold
        thresholds: Decision thresholds; one metrics row each
        fold_thresholds: Optional per-fold thresholds overriding `thresholds`
            (same row count), used for thresholds calibrated on each fold
    """
    if not fold_items:
        raise ValidationError("a report needs at least one fold")
    if not thresholds:
        raise ValidationError("a report needs at least one threshold")

    curves = [roc_curve(items) for items in fold_items]
    folds = []
    for index, (items, curve) in enumerate(zip(fold_items, curves)):
        row_thresholds = fold_thresholds[index] if fold_thresholds else thresholds
        folds.append(FoldBlock(
            fold=index + 1,
            n_test=len(items),
            auc=curve.auc,
            metrics=[threshold_metrics(items, t) for t in row_thresholds],
        ))

    mean_rows = []
    for row, threshold in enumerate(thresholds):
        per_fold = [f.metrics[row] for f in folds]
        mean_rows.append(ThresholdMetrics(
            threshold=threshold,
            accuracy=_mean([m.accuracy for m in per_fold]),
            sensitivity=_mean([m.sensitivity for m in per_fold]),
            specificity=_mean([m.specificity for m in per_fold]),
        ))
    average = mean_roc(curves)
    report = RunReport(
        model=model,
        kind=kind,
        config=dict(config or {}),
        folds=folds,
        mean=MeanBlock(auc=average.auc, metrics=mean_rows),
        reference=dict(reference or {}),
        skipped=skipped,
        timings=dict(timings or {}),
    )
    return Evaluation(report=report, fold_curves=curves, mean_curve=average)


def _format_threshold(value: float) -> str:
    if np.isnan(value):
        return ""
    return repr(float(value))


def write_roc_csv(path: Path, curve: RocCurve) -> None:
    """CSV `fpr,tpr,threshold`; sentinels are written as inf/-inf, mean curves leave it empty."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["fpr", "tpr", "threshold"])
        for x, y, t in zip(curve.fpr, curve.tpr, curve.thresholds):
            writer.writerow([repr(float(x)), repr(float(y)), _format_threshold(t)])


def write_curves_csv(path: Path, rows: Sequence[Tuple[int, float, float, float]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
        for epoch, train_loss, val_loss, val_acc in rows:
            writer.writerow([epoch, repr(train_loss), repr(val_loss), repr(val_acc)])


def write_roc_outputs(out_dir: Path, evaluation: Evaluation) -> List[Path]:
    """roc_fold{K}.csv per fold (1-based) and roc_mean.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for index, curve in enumerate(evaluation.fold_curves, start=1):
        path = out_dir / f"roc_fold{index}.csv"
        write_roc_csv(path, curve)
        written.append(path)
    mean_path = out_dir / "roc_mean.csv"
    write_roc_csv(mean_path, evaluation.mean_curve)
    written.append(mean_path)
    return written


@dataclass(frozen=True)
class SvgSeries:
    label: str
    curve: RocCurve
    color: str
    dash: Optional[str] = None
    width: float = 1.5


FOLD_COLORS = ("#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2")
MODEL_COLORS = ("#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_SIZE = 480
_MARGIN = 64


def _xy(fpr: float, tpr: float) -> Tuple[float, float]:
    plot = _SIZE - 2 * _MARGIN
    return _MARGIN + fpr * plot, _MARGIN + (1.0 - tpr) * plot


def render_roc_svg(series: Sequence[SvgSeries], title: str = "ROC") -> str:
    """Standalone SVG: one polyline per series, axes, chance diagonal and a legend."""
    plot = _SIZE - 2 * _MARGIN
    lo, hi = _MARGIN, _MARGIN + plot
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
        f'viewBox="0 0 {_SIZE} {_SIZE}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{_SIZE}" height="{_SIZE}" fill="white"/>',
        f'<text x="{_SIZE / 2:.0f}" y="{_MARGIN / 2:.0f}" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{lo}" y1="{hi}" x2="{hi}" y2="{hi}" stroke="black"/>',
        f'<line x1="{lo}" y1="{hi}" x2="{lo}" y2="{lo}" stroke="black"/>',
        f'<line x1="{lo}" y1="{hi}" x2="{hi}" y2="{lo}" stroke="#bbbbbb" stroke-dasharray="4 4"/>',
    ]
    for tick in np.linspace(0.0, 1.0, 6):
        x, _ = _xy(tick, 0.0)
        _, y = _xy(0.0, tick)
        parts.append(f'<text x="{x:.1f}" y="{hi + 16}" text-anchor="middle">{tick:.1f}</text>')
        parts.append(f'<text x="{lo - 8}" y="{y + 4:.1f}" text-anchor="end">{tick:.1f}</text>')
    parts.append(
        f'<text x="{_SIZE / 2:.0f}" y="{_SIZE - 20}" text-anchor="middle">1 - specificity (FPR)</text>'
    )
    parts.append(
        f'<text x="18" y="{_SIZE / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {_SIZE / 2:.0f})">sensitivity (TPR) of model</text>'
    )

    for s in series:
        points = " ".join(f"{x:.2f},{y:.2f}" for x, y in (_xy(a, b) for a, b in zip(s.curve.fpr, s.curve.tpr)))
        dash = f' stroke-dasharray="{s.dash}"' if s.dash else ""
        parts.append(
            f'<polyline fill="none" stroke="{s.color}" stroke-width="{s.width}"{dash} points="{points}"/>'
        )

    for row, s in enumerate(series):
        y = hi - 12 - 16 * (len(series) - 1 - row)
        x = hi - 150
        dash = f' stroke-dasharray="{s.dash}"' if s.dash else ""
        parts.append(
            f'<line x1="{x}" y1="{y}" x2="{x + 20}" y2="{y}" stroke="{s.color}" stroke-width="{s.width}"{dash}/>'
        )
        parts.append(f'<text x="{x + 26}" y="{y + 4}">{s.label} (AUC {s.curve.auc:.4f})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def fold_series(evaluation: Evaluation) -> List[SvgSeries]:
    """One thin line per fold plus the thick black mean."""
    series = [
        SvgSeries(f"fold {i}", curve, FOLD_COLORS[(i - 1) % len(FOLD_COLORS)], width=1.0)
        for i, curve in enumerate(evaluation.fold_curves, start=1)
    ]
    series.append(SvgSeries("mean", evaluation.mean_curve, "black", width=2.5))
    return series


def write_svg(path: Path, series: Sequence[SvgSeries], title: str) -> None:
    Path(path).write_text(render_roc_svg(series, title))


def _pct(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value * 100:.2f}"


def fold_table(report: RunReport) -> Table:
    """Per-fold rows and the mean row for every threshold."""
    table = Table(title=f"{report.model}: test folds")
    table.add_column("Fold", style="cyan")
    table.add_column("Threshold")
    table.add_column("Accuracy %", justify="right")
    table.add_column("Sensitivity %", justify="right")
    table.add_column("Specificity %", justify="right")
    table.add_column("AUC", justify="right")
    for fold in report.folds:
        for m in fold.metrics:
            table.add_row(str(fold.fold), f"{m.threshold:g}", _pct(m.accuracy),
                          _pct(m.sensitivity), _pct(m.specificity), f"{fold.auc:.4f}")
    for m in report.mean.metrics:
        table.add_row("[bold]Mean[/bold]", f"{m.threshold:g}", _pct(m.accuracy),
                      _pct(m.sensitivity), _pct(m.specificity), f"{report.mean.auc:.4f}")
    return table


def comparison_table(reports: Sequence[RunReport]) -> Table:
    """One row per (model, threshold) with mean metrics; AUC repeats across a model's rows."""
    table = Table(title="Model comparison (mean over test folds)")
    table.add_column("Model", style="cyan")
    table.add_column("Threshold")
    table.add_column("Accuracy %", justify="right")
    table.add_column("Sensitivity %", justify="right")
    table.add_column("Specificity %", justify="right")
    table.add_column("AUC", justify="right")
    for report in reports:
        for m in report.mean.metrics:
            table.add_row(report.model, f"{m.threshold:g}", _pct(m.accuracy),
                          _pct(m.sensitivity), _pct(m.specificity), f"{report.mean.auc:.4f}")
    return table


def reference_table(reference: Dict[str, Any]) -> Table:
    """Published reference rows (percent values and AUC) for side-by-side reading."""
    table = Table(title="Reference values (clinical dataset)")
    table.add_column("Model", style="dim")
    table.add_column("Accuracy %", justify="right")
    table.add_column("Sensitivity %", justify="right")
    table.add_column("Specificity %", justify="right")
    table.add_column("AUC", justify="right")
    for name, values in reference.items():
        mean = values.get("mean", values) if isinstance(values, dict) else {}
        if not {"accuracy", "sensitivity", "specificity", "auc"} <= set(mean):
            continue
        table.add_row(name, f"{mean['accuracy']:.2f}", f"{mean['sensitivity']:.2f}",
                      f"{mean['specificity']:.2f}", f"{mean['auc']:.4f}")
    return table
