"""Imputation-based mixup augmentation for long-horizon time-series forecasting."""

from ima.errors import (
    ConfigError,
    DataError,
    ImaError,
    ParseError,
    ShapeError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "ImaError",
    "ParseError",
    "ShapeError",
    "TrainingError",
    "__version__",
]
