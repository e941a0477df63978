"""Exception hierarchy.

Each top-level family maps to one CLI exit code (see ``cli.EXIT_CODES``).
"""

from __future__ import annotations


class VidmemError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(VidmemError, ValueError):
    pass


class ConfigError(VidmemError):
    pass


class InputError(VidmemError):
    """A record, file, or user-supplied value could not be accepted."""


class DegenerateEntity(InputError):
    pass


class DegenerateFeature(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class UnknownNode(InputError, KeyError):
    pass


class DependencyError(InputError):
    """Coarse ingestion is missing constituent fine captions."""

    def __init__(self, message: str, gaps: list[tuple[int, int]]):
        super().__init__(message)
        self.gaps = gaps


class IngestError(VidmemError):
    def __init__(self, message: str, segment_id: str | None = None):
        super().__init__(message)
        self.segment_id = segment_id


class BackendError(VidmemError):
    retryable = False


class TransportError(BackendError):
    retryable = True


class UnscriptedPrompt(BackendError):
    """The scripted backend has no fixture or handler for a request."""


class ParseError(VidmemError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class SchemaViolation(ParseError):
    pass


class InternalConsistencyError(VidmemError):
    pass


class SnapshotError(VidmemError):
    pass


class DigestMismatch(SnapshotError):
    pass


class UnsupportedVersion(SnapshotError):
    pass
