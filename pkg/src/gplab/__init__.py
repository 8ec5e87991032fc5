"""Numerical laboratory for the Gross-Pitaevskii hierarchy on rectangular tori."""

import os as _os

import numba as _numba

# a fixed threading layer keeps parallel reductions reproducible; override via the env var
if "NUMBA_THREADING_LAYER" not in _os.environ:
    _numba.config.THREADING_LAYER = "workqueue"

from .errors import (
    ConfigError,
    DimensionError,
    IntegerRangeError,
    LabError,
    LatticeError,
    PreconditionError,
    ResolutionError,
    ThresholdError,
)
from .torus import DyadicIndex, QuadraticForm

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "DyadicIndex",
    "IntegerRangeError",
    "LabError",
    "LatticeError",
    "PreconditionError",
    "QuadraticForm",
    "ResolutionError",
    "ThresholdError",
]
