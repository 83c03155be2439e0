"""Exception hierarchy shared by the numerical core and the CLI.

Numerical code raises; orchestration decides whether a failure is fatal
(fit, predict) or recorded and skipped (CV grid cells, single posterior draws).
"""

from __future__ import annotations

from typing import Optional


class NNGPError(Exception):
    """Root of every error this package raises on purpose."""


class InvalidInputError(NNGPError, ValueError):
    def __init__(self, message: str, index: Optional[int] = None):
        if index is not None:
            message = f"{message} (index {index})"
        super().__init__(message)
        self.index = index


class CapacityError(InvalidInputError):
    """A dense code path was asked to handle more than its cap."""


class SchemaError(InvalidInputError):
    """Input file is missing columns or carries unusable values."""


class FactorConstructionError(NNGPError, ArithmeticError):
    def __init__(self, index: int, jitter: float, reason: str = "local correlation system is not positive definite"):
        super().__init__(f"{reason} at location {index} after jitter {jitter:g}")
        self.index = index
        self.jitter = jitter


class CGConvergenceError(NNGPError, RuntimeError):
    def __init__(self, iters: int, rel_residual: float, reason: str = "did not converge"):
        super().__init__(f"conjugate gradient {reason}: iters={iters} rel_residual={rel_residual:.3e}")
        self.iters = iters
        self.rel_residual = rel_residual


class NumericalError(NNGPError, ArithmeticError):
    """A closed-form quantity came out outside its mathematical range."""
