"""Exception types shared across the toolkit.

The CLI maps each family to an exit code, so library code should raise the
narrowest class that applies.
"""

from __future__ import annotations


class PanoDarError(Exception):
    """Base class for every error raised by panodar."""


class InvalidInputError(PanoDarError, ValueError):
    """Arrays with the wrong shape, dtype, range or non-finite values."""


class GeometryError(PanoDarError, ValueError):
    """Window or crop geometry that does not fit the canvas."""


class DegenerateInputError(PanoDarError, ArithmeticError):
    """The quantity is undefined for this input (empty denominator)."""


class ConfigError(PanoDarError, ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class FormatError(PanoDarError):
    """A file does not follow the expected byte or JSON layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConsistencyError(FormatError):
    """A file parses but contradicts itself, e.g. declared vs decoded area."""
