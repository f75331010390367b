"""Exception hierarchy shared across the package.

Plain ValueError is used for bad numeric inputs to pure math functions;
the classes below mark conditions that callers (and the CLI exit-code
mapping) need to tell apart.
"""

from __future__ import annotations


class SpregError(Exception):
    """Base class for package-specific errors."""


class ConfigError(SpregError):
    """Invalid configuration, scenario, or pattern file (CLI exit code 2)."""


class ProtocolError(SpregError):
    """Out-of-order or duplicated calls on a stream (CLI exit code 3)."""


class TraceFormatError(SpregError):
    """Malformed trace or wire frame (CLI exit code 3)."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NotReadyError(SpregError):
    """A statistic was requested before enough samples were seen."""
