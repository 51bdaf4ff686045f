"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class ProfilerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ProfilerError):
    """Invalid configuration, registry, or missing credentials."""


class ValidationError(ProfilerError, ValueError):
    """An input violated an operation's precondition."""


class RetriableError(ProfilerError):
    """Transport kept failing after all retry attempts were used."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class BackendError(ProfilerError):
    """The backend answered with a non-retriable failure."""


class FixtureError(ProfilerError):
    """A strict-replay lookup missed the recorded fixtures."""


class ExtractionError(ProfilerError):
    """A trait extraction response contained no bullet items."""


class GroupingError(ProfilerError):
    """The grouping response could not be parsed as a JSON array of groups."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class PhaseError(ProfilerError):
    """A phase aborted; ``completed`` lists the work units that did finish."""

    def __init__(self, phase: str, message: str, completed: list[str] | None = None):
        super().__init__(f"phase {phase!r} failed: {message}")
        self.phase = phase
        self.completed = completed or []


class ArtifactError(ProfilerError):
    """Base class for artifact-store failures."""


class ArtifactNotFoundError(ArtifactError, FileNotFoundError):
    pass


class ArtifactConflictError(ArtifactError):
    """Refusing to overwrite an existing artifact without ``force``."""


class ArtifactParseError(ArtifactError):
    """The artifact file is not valid JSON."""

    def __init__(self, path: str, byte_offset: int, detail: str):
        super().__init__(f"{path}: invalid JSON at byte {byte_offset}: {detail}")
        self.byte_offset = byte_offset


class SchemaError(ArtifactError):
    """Payload does not match the phase schema (or its schema version)."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field
