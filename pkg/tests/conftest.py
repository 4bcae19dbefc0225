"""
Pytest configuration and fixtures for CLE Triage tests.

Provides common test fixtures, setup, and utilities for testing
CLE Triage components.
"""

import shutil
import tempfile
from pathlib import Path
from typing import Generator, List, Sequence

import numpy as np
import pytest

from cle_triage.config import get_config, update_config
from cle_triage.models import DatasetManifest, Label, ManifestRecord, ScoredItem
from cle_triage.nets import _SpecBuilder, NetSpec
from cle_triage.synthetic import generate_synthetic_dataset
from cle_triage.trainer import TrainConfig


@pytest.fixture(autouse=True)
def quiet_console() -> Generator[None, None, None]:
    """Silence progress output; restore the previous setting afterwards."""
    previous = get_config().QUIET
    update_config(QUIET=True)
    yield
    update_config(QUIET=previous)


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Provide a temporary directory for testing."""
    temp_path = Path(tempfile.mkdtemp())
    try:
        yield temp_path
    finally:
        shutil.rmtree(temp_path, ignore_errors=True)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dataset(temp_dir: Path) -> DatasetManifest:
    """16 synthetic 32x32 frames per class, split into 4 folds."""
    return generate_synthetic_dataset(n_per_class=16, image_size=32, seed=7, out_dir=temp_dir / "tiny", k=4)


@pytest.fixture
def small_manifest(temp_dir: Path) -> DatasetManifest:
    """12 synthetic 64x64 frames per class (the mini nets' native input size)."""
    return generate_synthetic_dataset(n_per_class=12, image_size=64, seed=3, out_dir=temp_dir / "small", k=4)


@pytest.fixture
def quick_config() -> TrainConfig:
    """Two epochs of SGD; enough to exercise the loop, not to converge."""
    return TrainConfig(learning_rate=0.01, batch_size=8, max_epochs=2, patience=2, seed=0)


def build_tiny_net(input_shape=(1, 32, 32)) -> NetSpec:
    """Small conv net used where training speed matters more than topology."""
    b = _SpecBuilder("tiny", tuple(input_shape))
    b.conv(4, 3, pad=1).relu().pool(2, 2)
    b.conv(8, 3, pad=1).relu().pool(2, 2)
    b.flatten().fc(16).relu().fc(2)
    return b.build()


@pytest.fixture
def tiny_spec() -> NetSpec:
    return build_tiny_net()


@pytest.fixture
def trained_checkpoint_dir(temp_dir: Path, small_manifest: DatasetManifest) -> Path:
    """Checkpoints from a one-epoch `train` run on the small manifest."""
    from click.testing import CliRunner

    from cle_triage.cli import main

    config_path = temp_dir / "train.yaml"
    config_path.write_text("training:\n  max_epochs: 1\n  batch_size: 8\n  patience: 1\n")
    out_dir = temp_dir / "run"
    result = CliRunner().invoke(main, [
        "--quiet", "train",
        "--manifest", str(small_manifest.root / "manifest.jsonl"),
        "--arch", "mini-alexnet",
        "--config", str(config_path),
        "--out-dir", str(out_dir),
    ])
    assert result.exit_code == 0, result.output
    return out_dir


# Test utilities

def make_items(scores: Sequence[float], positives: Sequence[bool]) -> List[ScoredItem]:
    """ScoredItems from scores and is-diagnostic flags."""
    return [
        ScoredItem(float(s), Label.DIAGNOSTIC if p else Label.NONDIAGNOSTIC)
        for s, p in zip(scores, positives)
    ]


def make_manifest(labels: Sequence[Label], root: Path, folds=None) -> DatasetManifest:
    """Manifest of placeholder paths (no image files)."""
    folds = list(folds) if folds is not None else [None] * len(labels)
    records = [
        ManifestRecord(path=f"images/{i:05d}.pgm", label=label, fold=fold)
        for i, (label, fold) in enumerate(zip(labels, folds))
    ]
    return DatasetManifest(records=records, root=root)


# Pytest configuration

def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers", "integration: mark test as integration test"
    )
    config.addinivalue_line(
        "markers", "slow: mark test as slow running"
    )
