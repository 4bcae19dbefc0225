"""
Configuration and Constants for CLE Triage

Centralizes runtime knobs and shipped defaults used throughout the codebase.
Values can be overridden via config YAML files or environment variables.
"""

import copy
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .errors import ConfigurationError


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() not in ("0", "false", "no", "")


class Constants:
    """Centralized constants for CLE Triage.

    These can be overridden at runtime or via environment variables.
    """

    # Concurrency settings
    THREADS: int = int(os.getenv("CLE_TRIAGE_THREADS", str(os.cpu_count() or 1)))
    QUEUE_CAPACITY: int = int(os.getenv("CLE_TRIAGE_QUEUE_CAPACITY", "8"))

    # Numerics
    F64_ACCUMULATE: bool = _env_flag("CLE_TRIAGE_F64_ACCUMULATE", "1")
    PROB_CLAMP: float = 1e-12

    # Console
    QUIET: bool = _env_flag("CLE_TRIAGE_QUIET", "0")

    # Data
    MIN_IMAGE_SIZE: int = 32
    DEFAULT_K: int = 4
    MANIFEST_NAME: str = "manifest.jsonl"
    DATASET_META_NAME: str = "dataset_meta.json"

    # Evaluation
    DEFAULT_THRESHOLD: float = 0.5
    HIGH_SENSITIVITY_THRESHOLD: float = 1e-5
    MEAN_ROC_GRID_POINTS: int = 1001

    # Config discovery
    CONFIG_ENV_VAR: str = "CLE_TRIAGE_CONFIG"
    CONFIG_PATHS = (
        Path("config/config.yaml"),
        Path("config/default_config.yaml"),
    )

    @classmethod
    def worker_count(cls, requested: Optional[int] = None) -> int:
        """Number of workers to use, capped by CLE_TRIAGE_THREADS."""
        cap = max(1, get_config().THREADS)
        if requested is None:
            return cap
        return max(1, min(requested, cap))


# Built-in fallback when no YAML file is found. Mirrors config/default_config.yaml.
DEFAULT_SETTINGS: Dict[str, Any] = {
    "training": {
        "learning_rate": 0.01,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "batch_size": 32,
        "max_epochs": 40,
        "lr_decay_factor": 0.1,
        "lr_decay_step": 10,
        "patience": 3,
        "seed": 0,
    },
    "data": {
        "image_size": 64,
        "k": 4,
        "split_seed": 0,
        "patient_level": False,
    },
    "evaluation": {
        "thresholds": [Constants.DEFAULT_THRESHOLD, Constants.HIGH_SENSITIVITY_THRESHOLD],
    },
    "streaming": {
        "queue_capacity": 8,
        "batch": 1,
    },
    "reference": {},
}


# Configuration singleton that can be updated at runtime
_config: Optional[Constants] = None


def get_config() -> Constants:
    """Get configuration singleton.

    Returns:
        Constants object with current configuration
    """
    global _config
    if _config is None:
        _config = Constants()
    return _config


def update_config(**kwargs: Any) -> None:
    """Update configuration values at runtime.

    Args:
        **kwargs: Configuration key-value pairs to update

    Example:
        update_config(THREADS=2, QUIET=True)
    """
    config = get_config()
    for key, value in kwargs.items():
        if hasattr(config, key):
            setattr(config, key, value)
        else:
            raise ValueError(f"Unknown configuration key: {key}")


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_settings(path: Optional[Path] = None) -> Dict[str, Any]:
    """Load settings from YAML (JSON files parse too) over the built-in defaults.

    Search order: explicit path, $CLE_TRIAGE_CONFIG, config/config.yaml,
    config/default_config.yaml.

    Args:
        path: Optional explicit config file

    Returns:
        Settings dictionary with the sections of DEFAULT_SETTINGS

    Raises:
        FileNotFoundError: If an explicit path does not exist
        ConfigurationError: If the chosen file is not valid YAML or not a mapping
    """
    candidates = []
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        candidates.append(path)
    env_path = os.getenv(Constants.CONFIG_ENV_VAR)
    if env_path:
        candidates.append(Path(env_path))
    candidates.extend(Constants.CONFIG_PATHS)

    for candidate in candidates:
        if candidate.exists():
            with open(candidate) as f:
                try:
                    loaded = yaml.safe_load(f) or {}
                except yaml.YAMLError as e:
                    raise ConfigurationError(f"Could not parse {candidate}: {e}") from e
            if not isinstance(loaded, dict):
                raise ConfigurationError(f"{candidate} must contain a mapping of settings sections")
            return _merge(DEFAULT_SETTINGS, loaded)

    return copy.deepcopy(DEFAULT_SETTINGS)
