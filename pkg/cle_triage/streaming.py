"""
Streaming throughput benchmark

Replays manifest frames through three concurrent stages connected by bounded
queues:

    decode (async file read + PGM parse) -> preprocess -> inference

Each frame's latency runs from the start of its read to the moment its score
is available. Scores come out in input order and are compared bit-for-bit
against batch scoring of the same checkpoint.
"""

import asyncio
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console

from .checkpoint import Checkpoint
from .config import get_config
from .errors import ValidationError
from .imaging import load_frame, pgm_read_async, prepare_frame
from .models import DatasetManifest, ManifestRecord

console = Console()

_DONE = None


@dataclass
class StreamBenchResult:
    frames: int
    batch: int
    queue_capacity: int
    wall_seconds: float
    inference_seconds: float
    latencies_ms: np.ndarray
    stream_scores: np.ndarray
    batch_scores: np.ndarray
    reference: Dict[str, Any] = field(default_factory=dict)

    @property
    def images_per_second(self) -> float:
        """End-to-end throughput including decode and preprocessing."""
        return self.frames / self.wall_seconds if self.wall_seconds > 0 else 0.0

    @property
    def inference_images_per_second(self) -> float:
        return self.frames / self.inference_seconds if self.inference_seconds > 0 else 0.0

    @property
    def bit_identical(self) -> bool:
        return bool(np.array_equal(self.stream_scores, self.batch_scores))

    @property
    def max_abs_difference(self) -> float:
        if self.frames == 0:
            return 0.0
        return float(np.max(np.abs(self.stream_scores - self.batch_scores)))

    def percentiles(self) -> Dict[str, float]:
        if self.frames == 0:
            return {"p50": 0.0, "p95": 0.0, "p99": 0.0}
        p50, p95, p99 = np.percentile(self.latencies_ms, [50, 95, 99])
        return {"p50": float(p50), "p95": float(p95), "p99": float(p99)}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frames": self.frames,
            "batch": self.batch,
            "queue_capacity": self.queue_capacity,
            "wall_seconds": self.wall_seconds,
            "images_per_second": self.images_per_second,
            "inference_seconds": self.inference_seconds,
            "inference_images_per_second": self.inference_images_per_second,
            "latency_ms": self.percentiles(),
            "bit_identical": self.bit_identical,
            "max_abs_difference": self.max_abs_difference,
            "reference": self.reference,
        }


async def stream_scores(
    checkpoint: Checkpoint,
    manifest: DatasetManifest,
    records: Sequence[ManifestRecord],
    batch: int = 1,
    queue_capacity: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """Run the three-stage pipeline.

    Returns:
        (scores in input order, per-frame latency in ms, wall seconds, inference seconds)
    """
    if batch < 1:
        raise ValidationError(f"batch must be at least 1, got {batch}")
    capacity = queue_capacity or get_config().QUEUE_CAPACITY
    size = int(checkpoint.spec.input_shape[1])
    mean = checkpoint.mean_pixel
    network = checkpoint.network

    decoded: asyncio.Queue = asyncio.Queue(maxsize=capacity)
    prepared: asyncio.Queue = asyncio.Queue(maxsize=capacity)
    scores = np.zeros(len(records), dtype=np.float64)
    latencies = np.zeros(len(records), dtype=np.float64)
    inference_seconds = 0.0

    async def decode() -> None:
        for index, record in enumerate(records):
            started = time.perf_counter()
            image = await pgm_read_async(manifest.resolve(record))
            await decoded.put((index, started, image))
        await decoded.put(_DONE)

    async def preprocess() -> None:
        while (item := await decoded.get()) is not _DONE:
            index, started, image = item
            await prepared.put((index, started, prepare_frame(image, size, mean)))
        await prepared.put(_DONE)

    async def infer() -> None:
        nonlocal inference_seconds
        finished = False
        while not finished:
            pending: List[Tuple[int, float, np.ndarray]] = []
            while len(pending) < batch:
                item = await prepared.get()
                if item is _DONE:
                    finished = True
                    break
                pending.append(item)
            if not pending:
                continue
            x = np.stack([tensor for _, _, tensor in pending])
            started = time.perf_counter()
            probs = await asyncio.to_thread(network.predict_proba, x)
            done = time.perf_counter()
            inference_seconds += done - started
            for (index, frame_started, _), p in zip(pending, probs):
                scores[index] = p
                latencies[index] = (done - frame_started) * 1000.0

    wall_started = time.perf_counter()
    await asyncio.gather(decode(), preprocess(), infer())
    wall_seconds = time.perf_counter() - wall_started
    return scores, latencies, wall_seconds, inference_seconds


def batch_scores(
    checkpoint: Checkpoint,
    manifest: DatasetManifest,
    records: Sequence[ManifestRecord],
    batch_size: int = 64,
) -> np.ndarray:
    """Score frames the non-streaming way: load everything, then predict in batches."""
    if not records:
        return np.zeros(0)
    size = int(checkpoint.spec.input_shape[1])
    x = np.stack([load_frame(manifest.resolve(r), size, checkpoint.mean_pixel) for r in records])
    return checkpoint.network.predict_proba(x, batch_size=batch_size)


def run_stream_bench(
    checkpoint: Checkpoint,
    manifest: DatasetManifest,
    records: Optional[Sequence[ManifestRecord]] = None,
    batch: int = 1,
    limit: Optional[int] = None,
    queue_capacity: Optional[int] = None,
    reference: Optional[Dict[str, Any]] = None,
) -> StreamBenchResult:
    """Stream `records` (default: whole manifest, optionally the first `limit`) and compare to batch scoring."""
    records = list(manifest.records if records is None else records)
    if limit is not None:
        records = records[:limit]
    capacity = queue_capacity or get_config().QUEUE_CAPACITY

    if not get_config().QUIET:
        console.print(
            f"[green]Streaming {len(records)} frames (batch {batch}, queue capacity {capacity})[/green]"
        )
    scores, latencies, wall, inference = asyncio.run(
        stream_scores(checkpoint, manifest, records, batch=batch, queue_capacity=capacity)
    )
    reference_scores = batch_scores(checkpoint, manifest, records)
    result = StreamBenchResult(
        frames=len(records),
        batch=batch,
        queue_capacity=capacity,
        wall_seconds=wall,
        inference_seconds=inference,
        latencies_ms=latencies,
        stream_scores=scores,
        batch_scores=reference_scores,
        reference=dict(reference or {}),
    )
    if not result.bit_identical and not get_config().QUIET:
        console.print(
            f"[red]Streamed scores differ from batch scores (max |diff| {result.max_abs_difference:.3e})[/red]"
        )
    return result
