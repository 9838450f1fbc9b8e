"""Numerical laboratory for the mean-field limit of the cutoff Nelson model."""

from .errors import ConvergenceError, TruncationError

__version__ = "0.1.0"
__all__ = ["ConvergenceError", "TruncationError", "__version__"]
