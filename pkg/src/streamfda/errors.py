"""Exception types shared across the package."""

from __future__ import annotations


class StreamFdaError(Exception):
    """Base class for all package-specific errors."""


class InvalidBandwidth(StreamFdaError):
    """Raised when a bandwidth is not a positive finite number."""


class ShapeMismatch(StreamFdaError):
    """Raised when array arguments do not line up with the data layout."""


class AllDegenerate(StreamFdaError):
    """Raised when no grid point has any data in its kernel window."""


class ParseError(StreamFdaError):
    """Raised for malformed block records in a JSON-lines stream."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class DomainError(ParseError):
    """Raised when measurement times fall outside the configured domain."""


class SnapshotError(StreamFdaError):
    """Raised for unreadable, truncated, or incompatible snapshot files."""
