"""Exception types shared across the package."""


class GraphError(ValueError):
    """Invalid graph mutation or query (self-loop, vertex out of range, ...)."""


class StreamError(ValueError):
    """Malformed update stream. Carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvariantViolation(AssertionError):
    """A runtime invariant the algorithm guarantees was observed to fail.

    Raised instead of silently continuing: a trip here signals a bug or an
    unsound constant, not a recoverable condition.
    """


class OracleError(RuntimeError):
    """A reference oracle failed to reach its requested tolerance."""
