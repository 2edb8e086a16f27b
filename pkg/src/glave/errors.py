"""Exception hierarchy shared across the pipeline stages."""


class GlaveError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(GlaveError):
    """Bad configuration: unknown key, value out of range, invalid mode."""


class DegenerateInputError(GlaveError):
    """Input is structurally valid but empty or zero-sized."""


class EmptyInputError(GlaveError):
    """A sequence that must be non-empty is empty."""


class DimensionError(GlaveError):
    """Vector dimensions disagree within one sequence."""


class GeometryError(GlaveError):
    """A box or mask falls outside its image bounds."""


class TransportError(GlaveError):
    """Live request failed; `retryable` marks transient failures."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class FixtureMissingError(GlaveError):
    """Replay transport found no fixture for a request's cache key."""

    def __init__(self, cache_key: str):
        super().__init__(f"no fixture for cache key {cache_key}")
        self.cache_key = cache_key


class StructuredOutputError(GlaveError):
    """Model reply could not be parsed into the expected structure."""


class SchemaValidationError(StructuredOutputError):
    """Parsed JSON does not match the expected field layout."""


class StageError(GlaveError):
    """A pipeline stage failed hard (after any repair attempt)."""


class VerdictParseError(GlaveError):
    """Judge reply contains no unambiguous option letter."""


class ReportError(GlaveError):
    """Evaluation records cannot be aggregated (e.g. uneven run counts)."""


class WorkspaceError(GlaveError):
    """A required workspace artifact is missing or malformed."""
