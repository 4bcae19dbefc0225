"""
Training

SGD with momentum and weight decay, step learning-rate decay, early stopping
on validation accuracy/loss, and k-fold cross-validation that trains folds
concurrently and merges their results by fold index.
"""

import asyncio
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml
from rich.console import Console

from .checkpoint import Checkpoint
from .config import Constants, get_config, load_settings
from .errors import ConfigurationError, StructuralError, ValidationError
from .imaging import GrayImage, dataset_mean_pixel, read_images, stack_frames
from .metrics import MetricSet, RocCurve, classify_at_threshold, metrics, roc_curve
from .models import DatasetManifest, Label, ScoredItem, scored_items
from .nets import NetSpec, Network
from .nn.loss import one_hot, softmax, softmax_cross_entropy
from .nn.params import LayerParams
from .splits import FoldPlan, fold_plans

console = Console()

NetBuilder = Callable[[], NetSpec]


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters. Defaults are overridable from YAML/JSON."""
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    max_epochs: int = 40
    lr_decay_factor: float = 0.1
    lr_decay_step: int = 10
    patience: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        checks = [
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (0 <= self.momentum < 1, "momentum must be in [0, 1)"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.max_epochs >= 1, "max_epochs must be >= 1"),
            (0 < self.lr_decay_factor <= 1, "lr_decay_factor must be in (0, 1]"),
            (self.lr_decay_step >= 1, "lr_decay_step must be >= 1"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.seed >= 0, "seed must be >= 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigurationError(f"Invalid training config: {message}")

    def learning_rate_at(self, epoch: int) -> float:
        """Learning rate of a 1-based epoch under step decay."""
        return self.learning_rate * self.lr_decay_factor ** ((epoch - 1) // self.lr_decay_step)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "TrainConfig":
        """Build from a mapping; a nested `training` section is used if present.

        Raises:
            ConfigurationError: Unknown keys or invalid values
        """
        if "training" in data and isinstance(data["training"], Mapping):
            data = data["training"]
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigurationError(f"Unknown training config keys: {', '.join(unknown)}")
        try:
            values = {
                key: int(value) if key in ("batch_size", "max_epochs", "lr_decay_step", "patience", "seed")
                else float(value)
                for key, value in data.items()
            }
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid training config value: {e}") from e
        return cls(**values)

    @classmethod
    def from_file(cls, path: Optional[Path] = None) -> "TrainConfig":
        """Load from a YAML/JSON file, or from the discovered settings when path is None."""
        if path is None:
            return cls.from_mapping(load_settings()["training"])
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Training config not found: {path}")
        with open(path) as f:
            try:
                data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigurationError(f"Could not parse {path}: {e}") from e
        if not isinstance(data, Mapping):
            raise ConfigurationError(f"{path} must contain a mapping")
        return cls.from_mapping(data)


def sgd_step(params: LayerParams, lr: float, momentum: float, weight_decay: float) -> LayerParams:
    """v <- momentum * v - lr * (g + weight_decay * w); w <- w + v; gradients zeroed."""
    for w, g, v in (
        (params.weights, params.grad_weights, params.velocity_weights),
        (params.bias, params.grad_bias, params.velocity_bias),
    ):
        v *= momentum
        v -= lr * (g + weight_decay * w)
        w += v
    params.zero_grad()
    return params


class EarlyStopping:
    """Stops when val accuracy hasn't improved, or val loss has risen, for `patience` epochs."""

    def __init__(self, patience: int) -> None:
        self.patience = patience
        self.best_accuracy = -np.inf
        self.best_epoch = 0
        self._stale = 0
        self._rising = 0
        self._previous_loss: Optional[float] = None

    def update(self, epoch: int, val_accuracy: float, val_loss: float) -> bool:
        """Record an epoch; returns True when training should stop."""
        if val_accuracy > self.best_accuracy:
            self.best_accuracy = val_accuracy
            self.best_epoch = epoch
            self._stale = 0
        else:
            self._stale += 1

        if self._previous_loss is not None and val_loss > self._previous_loss:
            self._rising += 1
        else:
            self._rising = 0
        self._previous_loss = val_loss

        return self._stale >= self.patience or self._rising >= self.patience

    @property
    def improved(self) -> bool:
        return self._stale == 0


@dataclass
class FrameSet:
    """Network inputs [N, C, H, W] with class indices (1 = diagnostic)."""
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, indices: np.ndarray) -> "FrameSet":
        return FrameSet(self.x[indices], self.y[indices])


@dataclass
class FoldResult:
    fold: int
    checkpoint: Checkpoint
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    test_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    train_seconds: float = 0.0
    inference_seconds: float = 0.0

    def curve_rows(self) -> List[Tuple[int, float, float, float]]:
        """(epoch, train_loss, val_loss, val_acc) per epoch."""
        return [
            (epoch, tl, vl, va)
            for epoch, (tl, vl, va) in enumerate(
                zip(self.train_loss, self.val_loss, self.val_accuracy), start=1
            )
        ]


def evaluate_loss_accuracy(net: Network, data: FrameSet, batch_size: int = 64) -> Tuple[float, float]:
    """Mean cross-entropy and accuracy of `net` on `data` (inference mode)."""
    total_loss = 0.0
    correct = 0
    for start in range(0, len(data), batch_size):
        xb, yb = data.x[start:start + batch_size], data.y[start:start + batch_size]
        logits = net.infer(xb)
        total_loss += softmax_cross_entropy(logits, one_hot(yb, 2)).value * len(yb)
        # same decision rule as classify_at_threshold at 0.5: score >= t is diagnostic
        predicted = (softmax(logits)[:, 1] >= 0.5).astype(yb.dtype)
        correct += int(np.sum(predicted == yb))
    return total_loss / len(data), correct / len(data)


def train_fold(
    net: Network,
    train_set: FrameSet,
    val_set: FrameSet,
    config: TrainConfig,
    fold: int = 0,
    metadata: Optional[Dict[str, Any]] = None,
) -> FoldResult:
    """Train until early stopping or max epochs; return the best-val-accuracy checkpoint.

    Raises:
        ConfigurationError: If the train or validation set is empty
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigurationError(
            f"fold {fold}: train ({len(train_set)}) and validation ({len(val_set)}) sets must be non-empty"
        )
    quiet = get_config().QUIET
    stopper = EarlyStopping(config.patience)
    result = FoldResult(fold=fold, checkpoint=Checkpoint(net))
    best_state = net.state()
    n = len(train_set)

    for epoch in range(1, config.max_epochs + 1):
        lr = config.learning_rate_at(epoch)
        order = np.random.default_rng(config.seed + epoch).permutation(n)
        dropout_rng = np.random.default_rng([config.seed, fold, epoch])
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            logits = net.forward(train_set.x[batch], training=True, rng=dropout_rng)
            loss = softmax_cross_entropy(logits, one_hot(train_set.y[batch], 2))
            net.backward(loss.gradient)
            for params in net.parameters():
                sgd_step(params, lr, config.momentum, config.weight_decay)
            epoch_loss += loss.value * len(batch)

        val_loss, val_acc = evaluate_loss_accuracy(net, val_set)
        result.train_loss.append(epoch_loss / n)
        result.val_loss.append(val_loss)
        result.val_accuracy.append(val_acc)
        stop = stopper.update(epoch, val_acc, val_loss)
        if stopper.improved:
            best_state = net.state()
        result.stopped_epoch = epoch

        if not quiet:
            console.print(
                f"[blue]fold {fold + 1} epoch {epoch}: lr {lr:.2e} train loss {epoch_loss / n:.4f} "
                f"val loss {val_loss:.4f} val acc {val_acc:.4f}[/blue]"
            )
        if stop:
            break

    net.load_state(best_state)
    result.best_epoch = stopper.best_epoch
    result.checkpoint = Checkpoint(
        net,
        {
            **(metadata or {}),
            "fold": fold,
            "epoch": stopper.best_epoch,
            "stopped_epoch": result.stopped_epoch,
            "seed": config.seed,
            "val_accuracy_history": [float(v) for v in result.val_accuracy],
            "val_loss_history": [float(v) for v in result.val_loss],
        },
    )
    return result


@dataclass
class CrossValidationResult:
    """Fold results (ordered by fold) and the data needed to score them."""
    spec: NetSpec
    config: TrainConfig
    labels: List[Label]
    paths: List[str]
    folds: List[FoldResult]
    plans: List[FoldPlan]

    def test_items(self, fold: FoldResult) -> List[ScoredItem]:
        return scored_items(fold.test_scores.tolist(), [self.labels[i] for i in fold.test_indices])

    def fold_metrics(self, threshold: float) -> List[MetricSet]:
        return [metrics(classify_at_threshold(self.test_items(f), threshold)) for f in self.folds]

    def fold_rocs(self) -> List[RocCurve]:
        return [roc_curve(self.test_items(f)) for f in self.folds]


def load_training_images(manifest: DatasetManifest, spec: NetSpec) -> List[GrayImage]:
    """Read every manifest frame at the dataset size and check it fits the network.

    Raises:
        StructuralError: If the network expects a different input size
    """
    paths = [manifest.resolve(r) for r in manifest.records]
    size = manifest.meta.get("image_size")
    images = read_images(paths, size=int(size) if size else None)
    if not images:
        raise ValidationError("manifest has no records")
    height, width = images[0].height, images[0].width
    expected = tuple(spec.input_shape)
    if (1, height, width) != expected:
        raise StructuralError(
            f"{spec.name} expects {expected[1]}x{expected[2]} input, "
            f"dataset frames are {width}x{height}"
        )
    return images


def _run_fold(
    spec: NetSpec,
    config: TrainConfig,
    plan: FoldPlan,
    images: Sequence[GrayImage],
    targets: np.ndarray,
    metadata: Dict[str, Any],
) -> FoldResult:
    started = time.perf_counter()
    mean = dataset_mean_pixel([images[i] for i in plan.train])
    data = FrameSet(stack_frames(images, mean), targets)
    net = Network(spec, seed=config.seed)
    result = train_fold(
        net, data.subset(plan.train), data.subset(plan.val), config,
        fold=plan.fold, metadata={**metadata, "mean_pixel": mean},
    )
    result.train_seconds = time.perf_counter() - started

    started = time.perf_counter()
    result.test_scores = net.predict_proba(data.x[plan.test])
    result.inference_seconds = time.perf_counter() - started
    result.test_indices = plan.test
    return result


async def _cross_validate_async(
    spec: NetSpec,
    config: TrainConfig,
    plans: Sequence[FoldPlan],
    images: Sequence[GrayImage],
    targets: np.ndarray,
    metadata: Dict[str, Any],
    workers: int,
) -> List[FoldResult]:
    semaphore = asyncio.Semaphore(workers)

    async def _one(plan: FoldPlan) -> FoldResult:
        async with semaphore:
            return await asyncio.to_thread(_run_fold, spec, config, plan, images, targets, metadata)

    results = await asyncio.gather(*[_one(plan) for plan in plans])
    return sorted(results, key=lambda r: r.fold)


def cross_validate(
    manifest: DatasetManifest,
    net_builder: NetBuilder,
    config: TrainConfig,
    k: Optional[int] = None,
    workers: Optional[int] = None,
    arch: Optional[str] = None,
) -> CrossValidationResult:
    """Train one network per fold and score its test fold.

    Args:
        manifest: Fold-assigned manifest
        net_builder: Returns the NetSpec to train
        config: Training hyperparameters
        k: Expected fold count (checked against the manifest)
        workers: Folds trained concurrently (capped by CLE_TRIAGE_THREADS)
        arch: Architecture name recorded in checkpoint metadata

    Returns:
        CrossValidationResult with folds ordered by index

    Raises:
        ValidationError: Missing fold assignments or a k mismatch
        StructuralError: If frames don't fit the network input
    """
    folds = manifest.folds()
    if k is not None and manifest.k != k:
        raise ValidationError(f"manifest is split into {manifest.k} folds, expected {k}")
    spec = net_builder()
    labels = manifest.labels
    plans = fold_plans(folds, labels, seed=config.seed)
    images = load_training_images(manifest, spec)
    targets = np.array([label.class_index for label in labels], dtype=np.int64)

    if not get_config().QUIET:
        console.print(
            f"[green]Cross-validating {spec.name} on {len(labels)} frames, {len(plans)} folds[/green]"
        )
    metadata = {"arch": arch or spec.name}
    results = asyncio.run(
        _cross_validate_async(
            spec, config, plans, images, targets, metadata,
            Constants.worker_count(workers),
        )
    )
    return CrossValidationResult(
        spec=spec,
        config=config,
        labels=labels,
        paths=[r.path for r in manifest.records],
        folds=results,
        plans=list(plans),
    )
