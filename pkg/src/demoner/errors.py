"""Shared exception types.

Every error the toolkit raises deliberately derives from DemonerError so the
CLI and the HTTP service can map failures to exit codes / response kinds
without string matching.
"""


class DemonerError(Exception):
    """Base class for all toolkit errors."""

    kind = "data"


class UsageError(DemonerError):
    """Bad invocation: invalid argument values, missing files, empty grids."""

    kind = "usage"


class DataError(DemonerError):
    """Malformed or inconsistent input data."""

    kind = "data"


class CorpusFormatError(DataError):
    """Malformed CoNLL text; carries the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingDivergenceError(DemonerError):
    """Non-finite loss during gradient descent (learning rate too large)."""

    kind = "divergence"


class EncoderProtocolError(DemonerError):
    """Remote embedding provider unreachable or returned a bad payload."""

    kind = "data"
