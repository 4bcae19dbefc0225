"""
Entropy baseline

Scores a frame by the Shannon entropy of its 8-bit histogram, divided by the
8-bit maximum so it reads as a probability of being informative. Frames are
scored at full resolution.
"""

import asyncio
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from rich.console import Console

from .config import Constants, get_config
from .errors import PGMError, ValidationError
from .imaging import GrayImage, pgm_read_async
from .models import DatasetManifest, ManifestRecord, ScoredItem

console = Console()

MAX_ENTROPY_BITS = 8.0


@dataclass(frozen=True)
class EntropyScore:
    raw: float
    normalized: float


def image_entropy(image: Union[GrayImage, np.ndarray]) -> EntropyScore:
    """-sum p_i log2 p_i over the 256-bin histogram (0 log 0 = 0).

    Raises:
        ValidationError: If the image has no pixels
    """
    pixels = image.pixels if isinstance(image, GrayImage) else np.asarray(image)
    if pixels.size == 0:
        raise ValidationError("cannot compute the entropy of an empty image")
    counts = np.bincount(pixels.astype(np.uint8).ravel(), minlength=256)
    p = counts[counts > 0] / pixels.size
    raw = float(min(MAX_ENTROPY_BITS, max(0.0, -np.sum(p * np.log2(p)))))
    return EntropyScore(raw=raw, normalized=raw / MAX_ENTROPY_BITS)


@dataclass(frozen=True)
class SkippedFrame:
    path: str
    reason: str


@dataclass
class EntropyRun:
    """Scores of the readable frames, in manifest order, plus what was skipped."""
    records: List[ManifestRecord] = field(default_factory=list)
    scores: List[EntropyScore] = field(default_factory=list)
    skipped: List[SkippedFrame] = field(default_factory=list)

    @property
    def items(self) -> List[ScoredItem]:
        return [ScoredItem(s.normalized, r.label) for r, s in zip(self.records, self.scores)]

    @property
    def skip_count(self) -> int:
        return len(self.skipped)


async def score_records_async(
    manifest: DatasetManifest,
    records: Sequence[ManifestRecord],
    workers: Optional[int] = None,
) -> EntropyRun:
    """Score frames concurrently; unreadable frames are recorded and skipped."""
    semaphore = asyncio.Semaphore(Constants.worker_count(workers))

    async def _score(record: ManifestRecord):
        async with semaphore:
            try:
                image = await pgm_read_async(manifest.resolve(record))
            except (OSError, PGMError) as e:
                return SkippedFrame(record.path, str(e))
            return image_entropy(image)

    outcomes = await asyncio.gather(*[_score(r) for r in records])

    run = EntropyRun()
    for record, outcome in zip(records, outcomes):
        if isinstance(outcome, SkippedFrame):
            run.skipped.append(outcome)
        else:
            run.records.append(record)
            run.scores.append(outcome)
    if run.skipped and not get_config().QUIET:
        console.print(
            f"[yellow]Skipped {run.skip_count} unreadable frame(s); "
            f"first: {run.skipped[0].path}: {run.skipped[0].reason}[/yellow]"
        )
    return run


def entropy_classifier(
    manifest: DatasetManifest,
    records: Optional[Sequence[ManifestRecord]] = None,
    workers: Optional[int] = None,
) -> EntropyRun:
    """Score `records` (default: the whole manifest) by normalized entropy."""
    return asyncio.run(
        score_records_async(manifest, manifest.records if records is None else records, workers)
    )


def write_entropy_csv(path: Path, run: EntropyRun) -> None:
    """CSV with header `path,label,entropy_norm`."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["path", "label", "entropy_norm"])
        for record, score in zip(run.records, run.scores):
            writer.writerow([record.path, record.label.value, repr(score.normalized)])
