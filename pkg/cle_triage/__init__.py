"""
CLE Triage - diagnostic/nondiagnostic frame classification toolkit

Trains, evaluates and benchmarks small convolutional networks (AlexNet-style
and inception-style, implemented from scratch on numpy) that triage
microscopy frames, alongside an entropy baseline, with stratified k-fold
cross-validation, ROC/AUC reporting and a streaming throughput benchmark.
"""

__version__ = "0.1.0"
__author__ = "CLE Triage Development Team"

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .entropy_iqa import entropy_classifier, image_entropy
from .models import DatasetManifest, Label, ManifestRecord, ScoredItem
from .nets import (
    ARCHITECTURES,
    NetSpec,
    Network,
    build_full_alexnet,
    build_mini_alexnet,
    build_mini_inception_net,
)
from .splits import split_counts, stratified_kfold, train_val_split
from .synthetic import generate_synthetic_dataset
from .trainer import TrainConfig, cross_validate, train_fold

__all__ = [
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "entropy_classifier",
    "image_entropy",
    "DatasetManifest",
    "Label",
    "ManifestRecord",
    "ScoredItem",
    "ARCHITECTURES",
    "NetSpec",
    "Network",
    "build_full_alexnet",
    "build_mini_alexnet",
    "build_mini_inception_net",
    "split_counts",
    "stratified_kfold",
    "train_val_split",
    "generate_synthetic_dataset",
    "TrainConfig",
    "cross_validate",
    "train_fold",
]
