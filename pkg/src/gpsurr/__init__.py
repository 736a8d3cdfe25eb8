"""Gaussian-process surrogate models for solar-cell optical performance."""

__version__ = "0.1.0"

from .errors import DataError, GpsurrError, NumericalError
from .kernels import KernelFamily, KernelSpec

__all__ = [
    "DataError",
    "GpsurrError",
    "NumericalError",
    "KernelFamily",
    "KernelSpec",
]
