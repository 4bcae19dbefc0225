#!/usr/bin/env python3
"""
CLE Triage CLI

Main command-line interface for CLE Triage using Click.
Provides commands for data generation, splitting, training, evaluation,
the entropy baseline, model comparison and the streaming benchmark.
"""

import functools
import json
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import click
import numpy as np
from rich.console import Console
from rich.table import Table

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import Constants, get_config, load_settings, update_config
from .entropy_iqa import EntropyRun, entropy_classifier, write_entropy_csv
from .errors import CleTriageError, ValidationError
from .metrics import best_accuracy_threshold
from .models import DatasetManifest, Label, ScoredItem, scored_items
from .nets import ARCHITECTURES, build_architecture
from .reporting import (
    Evaluation,
    MODEL_COLORS,
    RunReport,
    SvgSeries,
    build_report,
    comparison_table,
    fold_series,
    fold_table,
    reference_table,
    write_curves_csv,
    write_roc_csv,
    write_roc_outputs,
    write_svg,
)
from .splits import assign_folds, counts_for_plans, fold_plans
from .streaming import batch_scores, run_stream_bench
from .synthetic import generate_synthetic_dataset
from .trainer import TrainConfig, cross_validate

console = Console()
err_console = Console(stderr=True, markup=False, highlight=False, soft_wrap=True)

CHECKPOINT_PATTERN = "fold*.clet"
REPORT_NAME = "report.json"


class Config:
    """Global configuration object passed between commands."""

    def __init__(self) -> None:
        self._settings: Optional[Dict[str, Any]] = None
        self.verbose: bool = False

    @property
    def settings(self) -> Dict[str, Any]:
        # discovered on first use so parse errors surface inside a command
        if self._settings is None:
            self._settings = load_settings()
        return self._settings

    def load(self, path: Optional[Path]) -> None:
        self._settings = load_settings(path)

    def section(self, name: str) -> Dict[str, Any]:
        return self.settings.get(name, {}) or {}


pass_config = click.make_pass_decorator(Config, ensure=True)


def handle_errors(func: Callable) -> Callable:
    """Report package and I/O errors as one `error:` line on stderr and exit 1."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except (CleTriageError, OSError) as e:
            config = click.get_current_context().find_object(Config)
            if config is not None and config.verbose:
                raise
            err_console.print(f"error: {e}")
            sys.exit(1)

    return wrapper


def _thresholds(values: Sequence[float], config: Config) -> List[float]:
    thresholds = list(values) or list(config.section("evaluation").get("thresholds", [Constants.DEFAULT_THRESHOLD]))
    for t in thresholds:
        if not 0.0 <= t <= 1.0:
            raise ValidationError(f"threshold {t} outside [0, 1]")
    return thresholds


def _reference_for(model: str, config: Config) -> Dict[str, Any]:
    """Published rows matching a model family, echoed into its report."""
    reference = config.section("reference")
    if "inception" in model or "googlenet" in model:
        names = ["googlenet", "googlenet_high_sensitivity"]
    elif "alexnet" in model:
        names = ["alexnet", "alexnet_high_sensitivity"]
    elif model == "entropy":
        names = ["entropy"]
    else:
        names = []
    return {name: reference[name] for name in names if name in reference}


def _fold_items(manifest: DatasetManifest, scores_by_fold: Dict[int, np.ndarray]) -> List[List[ScoredItem]]:
    folds = manifest.folds()
    items = []
    for fold in sorted(scores_by_fold):
        labels = [r.label for r, f in zip(manifest.records, folds) if f == fold]
        items.append(scored_items(scores_by_fold[fold].tolist(), labels))
    return items


def _load_fold_checkpoints(checkpoints_dir: Path) -> List[Checkpoint]:
    paths = sorted(Path(checkpoints_dir).glob(CHECKPOINT_PATTERN))
    if not paths:
        raise FileNotFoundError(f"No {CHECKPOINT_PATTERN} checkpoints in {checkpoints_dir}")
    first = load_checkpoint(paths[0])
    # every fold must hold the same network as the first one
    checkpoints = [first] + [load_checkpoint(p, expected_spec=first.spec) for p in paths[1:]]
    return sorted(checkpoints, key=lambda c: int(c.metadata.get("fold", 0)))


def _score_checkpoints(manifest: DatasetManifest, checkpoints_dir: Path) -> Tuple[str, List[List[ScoredItem]], float]:
    """Score every test fold with its own checkpoint.

    Returns:
        (architecture name, scored items per fold, inference seconds)
    """
    checkpoints = _load_fold_checkpoints(checkpoints_dir)
    folds = manifest.folds()
    scores: Dict[int, np.ndarray] = {}
    elapsed = 0.0
    for checkpoint in checkpoints:
        fold = int(checkpoint.metadata.get("fold", 0))
        records = [r for r, f in zip(manifest.records, folds) if f == fold]
        started = time.perf_counter()
        scores[fold] = batch_scores(checkpoint, manifest, records)
        elapsed += time.perf_counter() - started
    arch = str(checkpoints[0].metadata.get("arch", checkpoints[0].spec.name))
    return arch, _fold_items(manifest, scores), elapsed


def _write_evaluation(out_dir: Path, evaluation: Evaluation, title: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    evaluation.report.save(out_dir / REPORT_NAME)
    write_roc_outputs(out_dir, evaluation)
    write_svg(out_dir / "roc.svg", fold_series(evaluation), title)


def _evaluate_checkpoints(
    config: Config, manifest: DatasetManifest, checkpoints_dir: Path, thresholds: List[float]
) -> Evaluation:
    arch, fold_items, seconds = _score_checkpoints(manifest, checkpoints_dir)
    n_images = sum(len(items) for items in fold_items)
    return build_report(
        model=arch,
        kind="cnn",
        fold_items=fold_items,
        thresholds=thresholds,
        config={"arch": arch, "k": len(fold_items), "n_images": n_images},
        reference=_reference_for(arch, config),
        timings={
            "inference_seconds": seconds,
            "inference_images_per_second": n_images / seconds if seconds > 0 else None,
        },
    )


def _entropy_evaluation(
    config: Config, manifest: DatasetManifest, thresholds: List[float], best_threshold: bool
) -> Tuple[Evaluation, EntropyRun]:
    run = entropy_classifier(manifest)
    folds = manifest.folds()
    fold_of = {r.path: int(f) for r, f in zip(manifest.records, folds)}
    k = manifest.k
    items = run.items
    fold_items = [
        [item for record, item in zip(run.records, items) if fold_of[record.path] == fold]
        for fold in range(k)
    ]

    row_thresholds = list(thresholds)
    fold_thresholds = None
    if best_threshold:
        calibrated = []
        for fold in range(k):
            calibration = [
                item for record, item in zip(run.records, items) if fold_of[record.path] != fold
            ]
            calibrated.append(best_accuracy_threshold(calibration)[0])
        fold_thresholds = [row_thresholds + [t] for t in calibrated]
        row_thresholds = row_thresholds + [float(np.mean(calibrated))]

    evaluation = build_report(
        model="entropy",
        kind="entropy",
        fold_items=fold_items,
        thresholds=row_thresholds,
        config={"k": k, "n_images": len(items), "best_threshold": best_threshold},
        reference=_reference_for("entropy", config),
        skipped=run.skip_count,
        fold_thresholds=fold_thresholds,
    )
    return evaluation, run


@click.group()
@click.version_option(version=__version__)
@click.option("--verbose", "-v", is_flag=True, help="Show tracebacks instead of one-line errors")
@click.option("--quiet", "-q", is_flag=True, help="Silence progress output")
@click.option("--config", "config_path", type=click.Path(path_type=Path),
              help="YAML/JSON settings file (default: config/config.yaml or config/default_config.yaml)")
@pass_config
@handle_errors
def main(config: Config, verbose: bool, quiet: bool, config_path: Optional[Path]) -> None:
    """CLE Triage - diagnostic/nondiagnostic frame classification toolkit."""
    config.verbose = verbose
    if quiet:
        update_config(QUIET=True)
    if config_path is not None:
        config.load(config_path)


@main.command("gen-data")
@click.option("--n-per-class", type=int, default=1000, show_default=True, help="Frames per class")
@click.option("--size", type=int, default=None, help="Square frame size (default: data.image_size)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True, help="Output directory")
@click.option("--k", type=int, default=None, help="Folds to assign (default: data.k)")
@pass_config
@handle_errors
def gen_data(config: Config, n_per_class: int, size: Optional[int], seed: int, out_dir: Path, k: Optional[int]) -> None:
    """Generate a synthetic dataset of PGM frames plus manifest."""
    data = config.section("data")
    manifest = generate_synthetic_dataset(
        n_per_class=n_per_class,
        image_size=size or int(data.get("image_size", 64)),
        seed=seed,
        out_dir=out_dir,
        k=k or int(data.get("k", Constants.DEFAULT_K)),
    )
    console.print(f"[green]Wrote {len(manifest)} frames[/green]")
    console.print(str(out_dir / Constants.MANIFEST_NAME))


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--k", type=int, default=None, help="Number of folds (default: data.k)")
@click.option("--seed", type=int, default=None, help="Split seed (default: data.split_seed)")
@click.option("--patient-level", is_flag=True, default=None, help="Keep each patient's frames in one fold")
@click.option("--write", is_flag=True, help="Rewrite the manifest with the new folds")
@pass_config
@handle_errors
def split(config: Config, manifest_path: Path, k: Optional[int], seed: Optional[int],
          patient_level: Optional[bool], write: bool) -> None:
    """Assign stratified folds and print per-fold train/val/test counts."""
    data = config.section("data")
    k = k or int(data.get("k", Constants.DEFAULT_K))
    seed = int(data.get("split_seed", 0)) if seed is None else seed
    patient_level = bool(data.get("patient_level", False)) if not patient_level else True

    manifest = assign_folds(DatasetManifest.load(manifest_path), k=k, seed=seed, patient_level=patient_level)
    labels = manifest.labels
    counts = counts_for_plans(fold_plans(manifest.folds(), labels, seed), labels)

    table = Table(title=f"Split of {len(manifest)} frames into {k} folds (seed {seed})")
    table.add_column("Fold", style="cyan")
    for part in ("Train", "Val", "Test"):
        table.add_column(f"{part} diag", justify="right")
        table.add_column(f"{part} non-diag", justify="right")
    for row in counts:
        cells = [str(row.fold + 1)]
        for part in (row.train, row.val, row.test):
            cells += [str(part[Label.DIAGNOSTIC.value]), str(part[Label.NONDIAGNOSTIC.value])]
        table.add_row(*cells)
    console.print(table)

    if write:
        manifest.save(manifest_path)
        console.print(f"[green]Updated folds in {manifest_path}[/green]")


def _arch_options(arch: str, no_lrn: bool, dropout: Optional[float]) -> Dict[str, Any]:
    options: Dict[str, Any] = {}
    if arch in ("mini-alexnet", "full-alexnet"):
        options["use_lrn"] = not no_lrn
        if dropout is not None:
            options["dropout_rate"] = dropout
    return options


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--arch", default="mini-alexnet", show_default=True,
              help=f"Architecture ({', '.join(ARCHITECTURES)})")
@click.option("--config", "train_config", type=click.Path(path_type=Path),
              help="Training config file (YAML/JSON); default: training section of the settings")
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--no-lrn", is_flag=True, help="Disable local response normalization")
@click.option("--dropout", type=float, default=None, help="Dropout rate on FC layers")
@click.option("--threshold", "thresholds", type=float, multiple=True, help="Decision threshold(s)")
@click.option("--workers", type=int, default=None, help="Folds trained concurrently")
@pass_config
@handle_errors
def train(config: Config, manifest_path: Path, arch: str, train_config: Optional[Path], out_dir: Path,
          no_lrn: bool, dropout: Optional[float], thresholds: Tuple[float, ...], workers: Optional[int]) -> None:
    """Run k-fold cross-validation; write checkpoints, curves and report."""
    thresholds_list = _thresholds(thresholds, config)
    options = _arch_options(arch, no_lrn, dropout)
    build_architecture(arch, **options)
    if train_config is not None:
        train_cfg = TrainConfig.from_file(train_config)
    else:
        train_cfg = TrainConfig.from_mapping(config.section("training"))
    manifest = DatasetManifest.load(manifest_path)

    started = time.perf_counter()
    result = cross_validate(
        manifest, lambda: build_architecture(arch, **options), train_cfg, workers=workers, arch=arch
    )
    total_seconds = time.perf_counter() - started

    out_dir.mkdir(parents=True, exist_ok=True)
    for fold in result.folds:
        save_checkpoint(fold.checkpoint.network, out_dir / f"fold{fold.fold + 1}.clet",
                        fold.checkpoint.metadata)
        write_curves_csv(out_dir / f"curves_fold{fold.fold + 1}.csv", fold.curve_rows())

    n_test = [len(f.test_indices) for f in result.folds]
    evaluation = build_report(
        model=arch,
        kind="cnn",
        fold_items=[result.test_items(f) for f in result.folds],
        thresholds=thresholds_list,
        config={
            "arch": arch,
            "k": len(result.folds),
            "n_images": len(result.labels),
            "training": train_cfg.to_dict(),
            "arch_options": options,
            "stopped_epochs": [f.stopped_epoch for f in result.folds],
            "best_epochs": [f.best_epoch for f in result.folds],
        },
        reference=_reference_for(arch, config),
        timings={
            "total_seconds": total_seconds,
            "train_seconds": [f.train_seconds for f in result.folds],
            "inference_images_per_second": [
                n / f.inference_seconds if f.inference_seconds > 0 else None
                for n, f in zip(n_test, result.folds)
            ],
        },
    )
    _write_evaluation(out_dir, evaluation, f"{arch} ROC")
    console.print(fold_table(evaluation.report))
    console.print(f"[green]Checkpoints and report written to {out_dir}[/green]")


@main.command("eval")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--checkpoints-dir", type=click.Path(path_type=Path), required=True)
@click.option("--threshold", "thresholds", type=float, multiple=True,
              help="Decision threshold(s) (default: evaluation.thresholds)")
@click.option("--out-dir", type=click.Path(path_type=Path), default=None,
              help="Where to write report.json and ROC files (default: checkpoints dir)")
@pass_config
@handle_errors
def eval_cmd(config: Config, manifest_path: Path, checkpoints_dir: Path,
             thresholds: Tuple[float, ...], out_dir: Optional[Path]) -> None:
    """Score each test fold with its checkpoint and report metrics."""
    thresholds_list = _thresholds(thresholds, config)
    manifest = DatasetManifest.load(manifest_path)
    evaluation = _evaluate_checkpoints(config, manifest, checkpoints_dir, thresholds_list)
    _write_evaluation(out_dir or checkpoints_dir, evaluation, f"{evaluation.report.model} ROC")
    console.print(fold_table(evaluation.report))


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--checkpoints-dir", type=click.Path(path_type=Path), required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=Path("roc.svg"), show_default=True,
              help="roc.svg (plot + CSVs alongside) or a .csv path for the mean curve")
@pass_config
@handle_errors
def roc(config: Config, manifest_path: Path, checkpoints_dir: Path, out_path: Path) -> None:
    """Write per-fold and mean ROC curves as CSV and SVG."""
    manifest = DatasetManifest.load(manifest_path)
    evaluation = _evaluate_checkpoints(config, manifest, checkpoints_dir, [Constants.DEFAULT_THRESHOLD])
    out_dir = out_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    written = write_roc_outputs(out_dir, evaluation)
    if out_path.suffix.lower() == ".csv":
        write_roc_csv(out_path, evaluation.mean_curve)
    else:
        write_svg(out_path, fold_series(evaluation), f"{evaluation.report.model} ROC")
    console.print(f"[green]ROC written to {out_path}[/green] ({len(written)} CSV files)")
    console.print(f"Mean AUC {evaluation.report.mean.auc:.4f}")


@main.command("entropy-eval")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--threshold", "thresholds", type=float, multiple=True,
              help="Decision threshold(s) (default: evaluation.thresholds)")
@click.option("--best-threshold", is_flag=True,
              help="Add a row at the best-accuracy threshold calibrated on each fold's non-test frames")
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("entropy_eval"), show_default=True)
@pass_config
@handle_errors
def entropy_eval(config: Config, manifest_path: Path, thresholds: Tuple[float, ...],
                 best_threshold: bool, out_dir: Path) -> None:
    """Score test folds by normalized image entropy and report metrics."""
    thresholds_list = _thresholds(thresholds, config)
    manifest = DatasetManifest.load(manifest_path)
    evaluation, run = _entropy_evaluation(config, manifest, thresholds_list, best_threshold)
    _write_evaluation(out_dir, evaluation, "Entropy baseline ROC")
    write_entropy_csv(out_dir / "entropy_scores.csv", run)
    console.print(fold_table(evaluation.report))
    if run.skip_count:
        console.print(f"[yellow]{run.skip_count} frame(s) skipped[/yellow]")


def _parse_model(value: str) -> Tuple[str, Path]:
    name, sep, directory = value.partition("=")
    if not sep or not name or not directory:
        raise ValidationError(f"--model expects NAME=DIR, got {value!r}")
    return name, Path(directory)


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--model", "models", multiple=True, required=True, help="NAME=CHECKPOINTS_DIR (repeatable)")
@click.option("--threshold", "thresholds", type=float, multiple=True,
              help="Decision threshold(s) (default: evaluation.thresholds)")
@click.option("--entropy/--no-entropy", default=True, show_default=True, help="Include the entropy baseline")
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@pass_config
@handle_errors
def compare(config: Config, manifest_path: Path, models: Tuple[str, ...], thresholds: Tuple[float, ...],
            entropy: bool, out_dir: Path) -> None:
    """Compare trained models (and the entropy baseline) in one table and one ROC plot."""
    thresholds_list = _thresholds(thresholds, config)
    manifest = DatasetManifest.load(manifest_path)
    out_dir.mkdir(parents=True, exist_ok=True)

    reports: List[RunReport] = []
    series: List[SvgSeries] = []
    for index, spec in enumerate(models):
        name, directory = _parse_model(spec)
        evaluation = _evaluate_checkpoints(config, manifest, directory, thresholds_list)
        evaluation.report.model = name
        evaluation.report.save(out_dir / f"report_{name}.json")
        write_roc_csv(out_dir / f"roc_mean_{name}.csv", evaluation.mean_curve)
        reports.append(evaluation.report)
        series.append(SvgSeries(name, evaluation.mean_curve, MODEL_COLORS[index % len(MODEL_COLORS)], width=2.0))

    if entropy:
        evaluation, _ = _entropy_evaluation(config, manifest, thresholds_list, best_threshold=False)
        evaluation.report.save(out_dir / "report_entropy.json")
        write_roc_csv(out_dir / "roc_mean_entropy.csv", evaluation.mean_curve)
        reports.append(evaluation.report)
        series.append(SvgSeries("entropy", evaluation.mean_curve, "red", dash="2 3", width=2.0))

    write_svg(out_dir / "roc_compare.svg", series, "Average ROC curves")
    summary = [
        {"model": r.model, "auc": r.mean.auc, "metrics": [m.to_dict() for m in r.mean.metrics]}
        for r in reports
    ]
    (out_dir / "comparison.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    console.print(comparison_table(reports))
    console.print(reference_table(config.section("reference")))


@main.command("stream-bench")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(path_type=Path), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--batch", type=int, default=None, help="Frames per inference call (default: streaming.batch)")
@click.option("--limit", type=int, default=None, help="Stream only the first N frames")
@click.option("--arch", default=None, help="Expected architecture; a different checkpoint is rejected")
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None, help="Write results as JSON")
@pass_config
@handle_errors
def stream_bench(config: Config, checkpoint_path: Path, manifest_path: Path, batch: Optional[int],
                 limit: Optional[int], arch: Optional[str], out_path: Optional[Path]) -> None:
    """Replay frames through decode -> preprocess -> inference and measure throughput."""
    streaming = config.section("streaming")
    expected = build_architecture(arch) if arch else None
    checkpoint = load_checkpoint(checkpoint_path, expected_spec=expected)
    manifest = DatasetManifest.load(manifest_path)
    model = str(checkpoint.metadata.get("arch", checkpoint.spec.name))
    reference = {
        name: values["images_per_second"]
        for name, values in _reference_for(model, config).items()
        if isinstance(values, dict) and "images_per_second" in values
    }
    result = run_stream_bench(
        checkpoint,
        manifest,
        batch=batch or int(streaming.get("batch", 1)),
        limit=limit,
        queue_capacity=int(streaming.get("queue_capacity", get_config().QUEUE_CAPACITY)),
        reference={"images_per_second": reference},
    )

    table = Table(title=f"Stream benchmark: {model}")
    table.add_column("Measure", style="cyan")
    table.add_column("Value", justify="right")
    p = result.percentiles()
    table.add_row("Frames", str(result.frames))
    table.add_row("End-to-end images/s", f"{result.images_per_second:.1f}")
    table.add_row("Inference-only images/s", f"{result.inference_images_per_second:.1f}")
    table.add_row("Latency p50 / p95 / p99 (ms)", f"{p['p50']:.2f} / {p['p95']:.2f} / {p['p99']:.2f}")
    table.add_row("Stream == batch scores", "yes" if result.bit_identical else "NO")
    for name, value in reference.items():
        table.add_row(f"Reference {name} (GPU) images/s", str(value))
    console.print(table)

    if out_path is not None:
        out_path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    if not result.bit_identical:
        raise ValidationError(
            f"streamed scores differ from batch scores (max |diff| {result.max_abs_difference:.3e})"
        )


if __name__ == "__main__":
    main()
