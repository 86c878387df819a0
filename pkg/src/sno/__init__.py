"""Subsampled neural operator: embedders fused by summation, trained on random
space-time subsamples and evaluable at arbitrary query points."""

from sno.errors import (
    BoundsError,
    ConfigError,
    DegenerateFeatureError,
    DimensionError,
    DivergenceError,
    EmptyBatchError,
    FormatError,
    RangeError,
    SnoError,
    SolverError,
    StateError,
)

__version__ = "0.1.0"

__all__ = [
    "BoundsError",
    "ConfigError",
    "DegenerateFeatureError",
    "DimensionError",
    "DivergenceError",
    "EmptyBatchError",
    "FormatError",
    "RangeError",
    "SnoError",
    "SolverError",
    "StateError",
]
