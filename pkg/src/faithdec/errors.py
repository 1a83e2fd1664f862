"""Exception hierarchy shared by all faithdec modules."""


class FaithdecError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FaithdecError, ValueError):
    """A configuration value is out of range or inconsistent.

    ``field`` names the offending entry so callers can report it precisely.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class FormatError(FaithdecError, ValueError):
    """A data file does not follow its documented format.

    Carries the source path and 1-based line number when known.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}:" if line is None else f"{path}:{line}:"
        super().__init__(f"{loc} {message}".strip())
        self.path = path
        self.line = line


class PreconditionError(FaithdecError, ValueError):
    """An operation was called with arguments that violate its contract."""


class DimensionMismatchError(FaithdecError, ValueError):
    """Two vectors that must share a dimension do not."""


class ZeroVectorError(FaithdecError, ValueError):
    """An all-zero vector was used where a direction is required."""


class MissingEmbeddingError(FaithdecError, KeyError):
    """An embedding lookup failed; misses are loud, never fuzzy-matched."""

    def __str__(self) -> str:  # KeyError quotes its payload by default
        return self.args[0] if self.args else ""


class BackendUnavailableError(FaithdecError, ConnectionError):
    """A remote model backend cannot be reached."""


class ProtocolError(FaithdecError):
    """A remote backend sent a malformed or error response.

    ``code`` is the wire-level error code when the server supplied one.
    """

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        self.code = code


class LlmServiceError(FaithdecError):
    """The external completion service failed (non-200, bad payload, timeout)."""


class EmptyResponseError(LlmServiceError):
    """The completion service returned no usable text."""


class TooFewTagsError(FaithdecError, ValueError):
    """A ranked tag list is too short for dissimilar-range selection."""


class TemplateError(FaithdecError, ValueError):
    """A prompt template left a placeholder unresolved or is malformed."""
