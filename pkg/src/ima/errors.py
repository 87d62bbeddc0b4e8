"""Exception hierarchy. The CLI maps each family onto an exit code."""

from __future__ import annotations


class ImaError(Exception):
    """Base class for all package errors."""


class ConfigError(ImaError, ValueError):
    """Invalid experiment configuration (exit code 2)."""


class DataError(ImaError):
    """Problem with input data (exit code 3)."""


class ParseError(DataError, ValueError):
    """Malformed CSV content; message carries the row/column location."""


class ShapeError(DataError, ValueError):
    """Array or window shapes that cannot be reconciled."""


class TrainingError(ImaError, RuntimeError):
    """Non-finite loss or gradient during optimisation (exit code 4)."""
