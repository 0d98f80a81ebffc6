"""Exception taxonomy for the engine.

Three broad families map onto the CLI exit codes: configuration problems
(exit 2), backend/bridge problems (exit 3) and data/processing problems
(exit 4).  Everything raised by this package derives from MoodCanvasError
so callers can catch the whole family at once.
"""

from __future__ import annotations


class MoodCanvasError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MoodCanvasError):
    """Invalid configuration: unknown keys, bad values, malformed config files."""


class BackendError(MoodCanvasError):
    """A generator/estimator backend failed, timed out or is unavailable."""


class ProtocolError(BackendError):
    """The bridge wire protocol was violated (malformed frame, bad handshake)."""


class CapabilityError(BackendError):
    """An operation was requested that the backend does not support."""


class PartialFailureError(BackendError):
    """A batched backend operation failed part-way through.

    Carries the successfully completed portion so callers can salvage it.
    """

    def __init__(self, message: str, completed: list):
        super().__init__(message)
        self.completed = completed


class DataError(MoodCanvasError):
    """Invalid or insufficient input data."""


class DimensionError(DataError):
    """Vector/matrix dimensions do not match what the operation requires."""


class DomainError(DataError):
    """A value lies outside its admissible domain (e.g. class id >= num_classes)."""


class InsufficientDataError(DataError):
    """Not enough input to perform the operation (too short, too few rows)."""


class FileIOError(DataError):
    """A required file is missing or unreadable."""


class FormatError(DataError):
    """A file or payload is structurally not in the expected format."""


class VersionedFormatError(FormatError):
    """A persisted artifact declares a format version this code does not handle."""

    def __init__(self, message: str, found: object = None, expected: object = None):
        super().__init__(message)
        self.found = found
        self.expected = expected


class ParseError(FormatError):
    """A text artifact failed to parse; carries the byte offset when known."""

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class TrainingDivergedError(MoodCanvasError):
    """Training produced a non-finite loss; carries the epoch it happened in."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class StageError(MoodCanvasError):
    """A pipeline stage failed; names the stage and chains the cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
