"""
Image I/O and preprocessing

Binary PGM (P5) codec, bilinear resize and the pixel normalization that
turns a frame into a network input. The same `prepare_frame` path is used
for training, batch scoring and streaming so a frame's tensor never depends
on which of them produced it.
"""

import asyncio
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import aiofiles
import numpy as np

from .config import Constants
from .errors import (
    ConfigurationError,
    PGMHeaderError,
    PGMMaxvalError,
    PGMTruncatedError,
    PGMUnsupportedFormatError,
    StructuralError,
    ValidationError,
)

_WHITESPACE = b" \t\r\n\v\f"


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale frame stored as a [height, width] uint8 array."""
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.ndim != 2:
            raise ValidationError(f"GrayImage needs a 2-D pixel array, got shape {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValidationError(f"GrayImage pixels must be uint8, got {self.pixels.dtype}")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @classmethod
    def from_array(cls, values: np.ndarray) -> "GrayImage":
        """Clip to [0, 255], round and wrap any numeric 2-D array."""
        return cls(np.clip(np.rint(values), 0, 255).astype(np.uint8))


def _next_token(data: bytes, pos: int) -> Tuple[bytes, int, int]:
    """Return (token, token_start, position after token), skipping whitespace and comments."""
    while pos < len(data):
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif data[pos] in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos] not in _WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    return data[start:pos], start, pos


def _header_int(data: bytes, pos: int, field_name: str) -> Tuple[int, int, int]:
    token, start, pos = _next_token(data, pos)
    if not token:
        raise PGMTruncatedError(f"header ends before {field_name}", offset=start)
    if not token.isdigit():
        raise PGMHeaderError(f"{field_name} is not a decimal integer: {token[:16]!r}", offset=start)
    return int(token), start, pos


def decode_pgm(data: bytes) -> GrayImage:
    """Parse binary PGM bytes.

    Raises:
        PGMUnsupportedFormatError: Magic other than P5
        PGMHeaderError: Non-numeric or zero width/height, or missing separator
        PGMMaxvalError: Maxval outside 1..255
        PGMTruncatedError: Header or pixel payload ends early
    """
    if len(data) < 2:
        raise PGMTruncatedError("file ends inside the magic number", offset=len(data))
    if data[:2] != b"P5":
        raise PGMUnsupportedFormatError(
            f"unsupported format {data[:2]!r}; only binary grayscale P5 is read", offset=0
        )

    width, start, pos = _header_int(data, 2, "width")
    if width == 0:
        raise PGMHeaderError("width must be positive", offset=start)
    height, start, pos = _header_int(data, pos, "height")
    if height == 0:
        raise PGMHeaderError("height must be positive", offset=start)
    maxval, start, pos = _header_int(data, pos, "maxval")
    if not 1 <= maxval <= 255:
        raise PGMMaxvalError(f"maxval {maxval} outside 1..255", offset=start)

    if pos >= len(data):
        raise PGMTruncatedError("no pixel data after header", offset=pos)
    if data[pos] not in _WHITESPACE:
        raise PGMHeaderError("maxval must be followed by a single whitespace byte", offset=pos)
    payload_start = pos + 1

    expected = width * height
    available = len(data) - payload_start
    if available < expected:
        raise PGMTruncatedError(
            f"pixel payload has {available} of {expected} bytes", offset=len(data)
        )
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=payload_start)
    return GrayImage(pixels.reshape(height, width).copy())


def encode_pgm(image: GrayImage) -> bytes:
    """Canonical P5 encoding: `P5 <w> <h> 255\\n` followed by the raw rows."""
    header = f"P5 {image.width} {image.height} 255\n".encode("ascii")
    return header + np.ascontiguousarray(image.pixels).tobytes()


def pgm_read(path: Path) -> GrayImage:
    return decode_pgm(Path(path).read_bytes())


def pgm_write(path: Path, image: GrayImage) -> None:
    Path(path).write_bytes(encode_pgm(image))


async def pgm_read_async(path: Path) -> GrayImage:
    async with aiofiles.open(path, "rb") as f:
        data = await f.read()
    return decode_pgm(data)


async def pgm_write_async(path: Path, image: GrayImage) -> None:
    async with aiofiles.open(path, "wb") as f:
        await f.write(encode_pgm(image))


def _source_coords(target: int, source: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower index, upper index and weight of each target pixel (half-pixel centers)."""
    coords = (np.arange(target, dtype=np.float64) + 0.5) * (source / target) - 0.5
    coords = np.clip(coords, 0.0, source - 1)
    lower = np.floor(coords).astype(np.int64)
    upper = np.minimum(lower + 1, source - 1)
    return lower, upper, coords - lower


def resize_bilinear(image: GrayImage, target_w: int, target_h: int) -> GrayImage:
    """Bilinear resize with half-pixel centers, rounded and clamped to [0, 255].

    Raises:
        ValidationError: If a target extent is below 1
    """
    if target_w < 1 or target_h < 1:
        raise ValidationError(f"resize target must be at least 1x1, got {target_w}x{target_h}")
    if (target_w, target_h) == (image.width, image.height):
        return GrayImage(image.pixels.copy())

    x0, x1, fx = _source_coords(target_w, image.width)
    y0, y1, fy = _source_coords(target_h, image.height)
    src = image.pixels.astype(np.float64)
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return GrayImage.from_array(out)


def normalize_for_net(image: GrayImage, mean_pixel: Optional[float]) -> np.ndarray:
    """[1, H, W] float32 tensor: pixel / 255 minus the training-set mean pixel.

    Raises:
        ConfigurationError: If no mean pixel is available
    """
    if mean_pixel is None:
        raise ConfigurationError(
            "mean pixel is missing; it is stored in checkpoint metadata at training time"
        )
    scaled = image.pixels.astype(np.float64) / 255.0 - float(mean_pixel)
    return scaled.astype(np.float32)[None, :, :]


def fit_to_size(image: GrayImage, size: int) -> GrayImage:
    """Resize any frame (square or not) to size x size."""
    if image.width == size and image.height == size:
        return image
    return resize_bilinear(image, size, size)


def prepare_frame(image: GrayImage, size: int, mean_pixel: Optional[float]) -> np.ndarray:
    return normalize_for_net(fit_to_size(image, size), mean_pixel)


def load_frame(path: Path, size: int, mean_pixel: Optional[float]) -> np.ndarray:
    """Read a PGM frame and turn it into a [1, size, size] network input."""
    return prepare_frame(pgm_read(path), size, mean_pixel)


def dataset_mean_pixel(images: Sequence[GrayImage]) -> float:
    """Mean of pixel / 255 over all images (the value normalize_for_net subtracts)."""
    if not images:
        raise ValidationError("cannot compute a mean pixel over zero images")
    total = sum(int(img.pixels.sum(dtype=np.int64)) for img in images)
    count = sum(img.pixels.size for img in images)
    return float(total / count / 255.0)


async def read_images_async(paths: Sequence[Path], workers: Optional[int] = None) -> List[GrayImage]:
    """Read PGM files concurrently; results keep the order of `paths`."""
    semaphore = asyncio.Semaphore(Constants.worker_count(workers))

    async def _read(path: Path) -> GrayImage:
        async with semaphore:
            return await pgm_read_async(path)

    return list(await asyncio.gather(*[_read(p) for p in paths]))


def read_images(paths: Sequence[Path], size: Optional[int] = None) -> List[GrayImage]:
    """Read PGM files (optionally fitted to size x size) in input order."""
    images = asyncio.run(read_images_async(paths))
    if size is not None:
        images = [fit_to_size(img, size) for img in images]
    return images


def stack_frames(images: Sequence[GrayImage], mean: float) -> np.ndarray:
    """[N, 1, H, W] float32 batch from equally sized images.

    Raises:
        StructuralError: If the images differ in size
    """
    sizes = sorted({(img.width, img.height) for img in images})
    if len(sizes) > 1:
        listed = ", ".join(f"{w}x{h}" for w, h in sizes)
        raise StructuralError(f"cannot batch frames of different sizes: {listed}")
    return np.stack([normalize_for_net(img, mean) for img in images])
