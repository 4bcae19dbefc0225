"""
Synthetic CLE-surrogate dataset generator

Diagnostic frames: a textured background with 5-25 dark-rimmed elliptical
"cells". Nondiagnostic frames come uniformly from four artifact subclasses:

    motion        directional smear of a textured field
    saturated     near-white frames with little structure
    low_contrast  dim, blurred noise
    noise         uniform 0-255 pixel noise (high entropy)

Every image is drawn from its own generator seeded by (seed, index), so the
output is byte-identical for a given seed regardless of worker count.
"""

import asyncio
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from rich.console import Console
from scipy import ndimage

from .config import Constants, get_config
from .errors import ConfigurationError, ValidationError
from .imaging import GrayImage, pgm_write_async
from .models import DatasetManifest, Label, ManifestRecord
from .splits import stratified_kfold

console = Console()

NONDIAGNOSTIC_SUBCLASSES = ("motion", "saturated", "low_contrast", "noise")


def _texture(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    """Smooth zero-mean, unit-std random field."""
    field = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=sigma, mode="wrap")
    return (field - field.mean()) / (field.std() + 1e-12)


def _cells(rng: np.random.Generator, canvas: np.ndarray, scale: float) -> np.ndarray:
    size = canvas.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = canvas.copy()
    for _ in range(int(rng.integers(5, 26))):
        cy, cx = rng.uniform(0, size, 2)
        a, b = rng.uniform(3.0, 8.0, 2) * scale
        theta = rng.uniform(0, np.pi)
        dx, dy = xx - cx, yy - cy
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        d = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        out[d < 0.75] = rng.uniform(165, 205)
        out[(d >= 0.75) & (d <= 1.0)] = rng.uniform(25, 55)
    return out


def render_diagnostic(rng: np.random.Generator, size: int) -> np.ndarray:
    scale = size / 64.0
    background = rng.uniform(100, 140) + 22.0 * _texture(rng, size, 1.5 * scale)
    return _cells(rng, background, scale)


def _line_kernel(rng: np.random.Generator, scale: float) -> np.ndarray:
    length = int(round(rng.integers(9, 16) * scale)) | 1
    theta = rng.uniform(0, np.pi)
    kernel = np.zeros((length, length))
    centre = length // 2
    for t in np.linspace(-centre, centre, 4 * length):
        kernel[int(round(centre + t * np.sin(theta))), int(round(centre + t * np.cos(theta)))] = 1.0
    return kernel / kernel.sum()


def render_motion(rng: np.random.Generator, size: int) -> np.ndarray:
    field = render_diagnostic(rng, size)
    return ndimage.convolve(field, _line_kernel(rng, size / 64.0), mode="reflect")


def render_saturated(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.uniform(238, 250) + 3.0 * _texture(rng, size, 4.0 * size / 64.0)


def render_low_contrast(rng: np.random.Generator, size: int) -> np.ndarray:
    noise = rng.normal(0.0, 1.0, (size, size))
    blurred = ndimage.gaussian_filter(noise, sigma=2.0 * size / 64.0)
    return rng.uniform(60, 120) + 4.0 * blurred / (blurred.std() + 1e-12)


def render_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.integers(0, 256, (size, size)).astype(np.float64)


_RENDERERS = {
    "motion": render_motion,
    "saturated": render_saturated,
    "low_contrast": render_low_contrast,
    "noise": render_noise,
}


def render_frame(seed: int, index: int, label: Label, size: int) -> Tuple[GrayImage, Optional[str]]:
    """Deterministic frame for (seed, index); returns the image and its artifact subclass."""
    rng = np.random.default_rng([seed, index])
    if label is Label.DIAGNOSTIC:
        return GrayImage.from_array(render_diagnostic(rng, size)), None
    subclass = NONDIAGNOSTIC_SUBCLASSES[int(rng.integers(len(NONDIAGNOSTIC_SUBCLASSES)))]
    return GrayImage.from_array(_RENDERERS[subclass](rng, size)), subclass


async def _generate(
    labels: List[Label], size: int, seed: int, image_dir: Path, workers: int
) -> List[Optional[str]]:
    semaphore = asyncio.Semaphore(workers)

    async def _one(index: int, label: Label) -> Optional[str]:
        async with semaphore:
            image, subclass = await asyncio.to_thread(render_frame, seed, index, label, size)
            await pgm_write_async(image_dir / f"{index:05d}_{label.value}.pgm", image)
            return subclass

    return list(await asyncio.gather(*[_one(i, label) for i, label in enumerate(labels)]))


def generate_synthetic_dataset(
    n_per_class: int,
    image_size: int,
    seed: int,
    out_dir: Path,
    k: int = Constants.DEFAULT_K,
    workers: Optional[int] = None,
) -> DatasetManifest:
    """Write PGM frames, manifest.jsonl and dataset_meta.json under `out_dir`.

    Args:
        n_per_class: Frames per class
        image_size: Square frame size (>= 32)
        seed: Generator and fold-assignment seed
        out_dir: Output directory (created if needed)
        k: Number of folds to assign
        workers: Concurrent render/write tasks (capped by CLE_TRIAGE_THREADS)

    Returns:
        The written DatasetManifest

    Raises:
        ConfigurationError: If n_per_class < 1 or image_size is below the minimum
        OSError: If out_dir can't be written
    """
    minimum = get_config().MIN_IMAGE_SIZE
    if image_size < minimum:
        raise ConfigurationError(f"image size {image_size} is below the minimum {minimum}")
    if n_per_class < 1:
        raise ConfigurationError(f"n_per_class must be at least 1, got {n_per_class}")

    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    labels = [Label.DIAGNOSTIC] * n_per_class + [Label.NONDIAGNOSTIC] * n_per_class

    if not get_config().QUIET:
        console.print(
            f"[green]Generating {len(labels)} synthetic {image_size}x{image_size} frames "
            f"(seed {seed})[/green]"
        )
    subclasses = asyncio.run(
        _generate(labels, image_size, seed, image_dir, Constants.worker_count(workers))
    )

    try:
        folds: List[Optional[int]] = stratified_kfold(labels, k=k, seed=seed).tolist()
    except ValidationError as e:
        console.print(f"[yellow]Folds left unassigned: {e}[/yellow]")
        folds = [None] * len(labels)

    records = [
        ManifestRecord(
            path=f"images/{i:05d}_{label.value}.pgm",
            label=label,
            fold=fold,
            subclass=subclass,
        )
        for i, (label, fold, subclass) in enumerate(zip(labels, folds, subclasses))
    ]
    subclass_counts: Dict[str, int] = {name: 0 for name in NONDIAGNOSTIC_SUBCLASSES}
    for subclass in subclasses:
        if subclass is not None:
            subclass_counts[subclass] += 1
    meta = {
        "generator": "synthetic",
        "n_per_class": n_per_class,
        "image_size": image_size,
        "seed": seed,
        "k": k,
        "split_seed": seed,
        "nondiagnostic_subclasses": subclass_counts,
    }
    manifest = DatasetManifest(records=records, meta=meta, root=out_dir)
    manifest.save(out_dir / Constants.MANIFEST_NAME)
    if not get_config().QUIET:
        console.print(f"[blue]Manifest written to {out_dir / Constants.MANIFEST_NAME}[/blue]")
    return manifest
