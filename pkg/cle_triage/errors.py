"""
Error types for CLE Triage

Every error raised on purpose by the package derives from CleTriageError so the
CLI can report it as a single `error:` line. Concrete classes also inherit the
closest builtin (ValueError, RuntimeError, ...) so callers that only know the
builtin still catch them.
"""

from typing import Optional


class CleTriageError(Exception):
    """Base class for all package errors."""


class StructuralError(CleTriageError, ValueError):
    """Shapes, channels or layer chains do not fit together."""


class UsageError(CleTriageError, RuntimeError):
    """A stateful object was used out of order (e.g. backward before forward)."""


class ValidationError(CleTriageError, ValueError):
    """Input data violates a documented precondition."""


class ConfigurationError(CleTriageError, ValueError):
    """A configuration value is missing or out of range."""


class NumericalError(CleTriageError, ArithmeticError):
    """A computation on finite inputs produced NaN or Inf."""


class CheckpointError(CleTriageError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """The file is not a checkpoint (bad magic or unreadable header)."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written with an unsupported format version."""


class CheckpointChecksumError(CheckpointError):
    """A weight blob failed its CRC32 check."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before the header or a blob is complete."""


class CheckpointSpecMismatchError(CheckpointError):
    """The stored network does not match the expected architecture."""


class PGMError(CleTriageError, ValueError):
    """Base class for PGM parse errors; `offset` is the byte position of the fault."""

    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class PGMUnsupportedFormatError(PGMError):
    """Magic number other than binary P5."""


class PGMHeaderError(PGMError):
    """Malformed width/height/maxval fields."""


class PGMMaxvalError(PGMError):
    """Maxval outside 1..255."""


class PGMTruncatedError(PGMError):
    """Pixel payload shorter than width * height bytes."""
