"""
CLET checkpoint format

    b"CLET" | version u16 LE | header length u32 LE | JSON header | blobs

The JSON header holds the NetSpec, training metadata and one entry per blob
(name, shape, offset into the blob region, byte length, CRC32). Blobs are
little-endian f32 in row-major order. Headers are written with sorted keys
and compact separators, so save -> load -> save is byte-identical.
"""

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointFormatError,
    CheckpointSpecMismatchError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    StructuralError,
)
from .nets import NetSpec, Network

MAGIC = b"CLET"
CHECKPOINT_VERSION = 1
_PREAMBLE = struct.Struct("<4sHI")
_BLOB_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    """A network plus its training metadata (epoch, seed, val accuracy history, mean pixel)."""
    network: Network
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def spec(self) -> NetSpec:
        return self.network.spec

    @property
    def mean_pixel(self) -> Optional[float]:
        value = self.metadata.get("mean_pixel")
        return None if value is None else float(value)

    def to_bytes(self) -> bytes:
        blobs: List[bytes] = []
        entries: List[Dict[str, Any]] = []
        offset = 0
        for param_index, param in enumerate(self.network.parameters()):
            for name, tensor in param.tensors():
                raw = np.ascontiguousarray(tensor, dtype=_BLOB_DTYPE).tobytes()
                entries.append({
                    "name": f"{param_index}.{name}",
                    "shape": list(tensor.shape),
                    "offset": offset,
                    "length": len(raw),
                    "crc32": zlib.crc32(raw),
                })
                blobs.append(raw)
                offset += len(raw)

        header = {
            "net_spec": self.spec.to_dict(),
            "metadata": self.metadata,
            "blobs": entries,
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        preamble = _PREAMBLE.pack(MAGIC, CHECKPOINT_VERSION, len(header_bytes))
        return preamble + header_bytes + b"".join(blobs)

    @classmethod
    def from_bytes(cls, data: bytes, expected_spec: Optional[NetSpec] = None) -> "Checkpoint":
        """Parse a checkpoint.

        Args:
            data: Whole file contents
            expected_spec: If given, the stored NetSpec must equal it

        Raises:
            CheckpointFormatError: Bad magic or unreadable header
            CheckpointVersionError: Unsupported format version
            CheckpointTruncatedError: File ends early
            CheckpointChecksumError: A blob fails its CRC32
            CheckpointSpecMismatchError: Stored network differs from the expected one
        """
        if len(data) < _PREAMBLE.size:
            if MAGIC.startswith(data[:4]) and data:
                raise CheckpointTruncatedError(
                    f"checkpoint is {len(data)} bytes, shorter than its {_PREAMBLE.size}-byte preamble"
                )
            raise CheckpointFormatError("not a CLET checkpoint (bad magic)")
        magic, version, header_len = _PREAMBLE.unpack_from(data)
        if magic != MAGIC:
            raise CheckpointFormatError(f"not a CLET checkpoint (magic {magic!r})")
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )
        header_end = _PREAMBLE.size + header_len
        if len(data) < header_end:
            raise CheckpointTruncatedError(
                f"header needs {header_len} bytes, only {len(data) - _PREAMBLE.size} present"
            )
        try:
            header = json.loads(data[_PREAMBLE.size:header_end].decode("utf-8"))
            spec = NetSpec.from_dict(header["net_spec"])
            entries = header["blobs"]
            metadata = header.get("metadata", {})
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
            raise CheckpointFormatError(f"unreadable checkpoint header: {e}") from e
        except StructuralError as e:
            raise CheckpointFormatError(f"stored network spec is invalid: {e}") from e

        if expected_spec is not None and spec.to_dict() != expected_spec.to_dict():
            raise CheckpointSpecMismatchError(
                f"checkpoint holds {spec.name} with {len(spec.layers)} layers and input "
                f"{spec.input_shape}; expected {expected_spec.name} with "
                f"{len(expected_spec.layers)} layers and input {expected_spec.input_shape}"
            )

        region = memoryview(data)[header_end:]
        tensors = []
        for entry in entries:
            start, length = entry["offset"], entry["length"]
            if start + length > len(region):
                raise CheckpointTruncatedError(
                    f"blob {entry['name']} ends at byte {header_end + start + length}, "
                    f"file has {len(data)}"
                )
            raw = bytes(region[start:start + length])
            if zlib.crc32(raw) != entry["crc32"]:
                raise CheckpointChecksumError(f"blob {entry['name']} failed its CRC32 check")
            shape = tuple(entry["shape"])
            if length != int(np.prod(shape)) * _BLOB_DTYPE.itemsize:
                raise CheckpointFormatError(
                    f"blob {entry['name']} has {length} bytes for shape {shape}"
                )
            tensors.append(np.frombuffer(raw, dtype=_BLOB_DTYPE).reshape(shape).astype(np.float32))

        network = Network(spec)
        try:
            network.load_state(tensors)
        except StructuralError as e:
            raise CheckpointSpecMismatchError(f"weights do not fit {spec.name}: {e}") from e
        return cls(network=network, metadata=metadata)


def save_checkpoint(
    network: Network, path: Path, metadata: Optional[Dict[str, Any]] = None
) -> Path:
    """Write `network` and `metadata` to `path` (parent directories are created)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(Checkpoint(network, dict(metadata or {})).to_bytes())
    return path


def load_checkpoint(path: Path, expected_spec: Optional[NetSpec] = None) -> Checkpoint:
    """Read a checkpoint file; see Checkpoint.from_bytes for the errors raised."""
    return Checkpoint.from_bytes(Path(path).read_bytes(), expected_spec=expected_spec)
