"""Normal-Inverse-Gamma prior for (beta, sigma2).

Args/Inputs:
- mu, V: prior mean and covariance of beta given sigma2 (proper prior), or
  both None for the improper flat prior p(beta) ∝ 1.
- a_sigma, b_sigma: shape and scale of the InvGamma prior on sigma2,
  density ∝ x^(-a-1) exp(-b/x).

Provides:
- BetaPrior with the few linear-algebra pieces the conjugate updates need:
  V^{-1}, V^{-1} mu, L^{-1} (V = L L^T) and the prior quadratic.
- draw_sigma2: one InvGamma(a, b) variate from a given generator.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import stats
from scipy.linalg import cho_solve, solve_triangular

from conjnngp.exceptions import InvalidInputError


@dataclass(frozen=True, eq=False)
class BetaPrior:
    a_sigma: float = 2.0
    b_sigma: float = 1.0
    mu: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (self.a_sigma > 0 and self.b_sigma > 0):
            raise InvalidInputError("a_sigma and b_sigma must be positive")
        if (self.mu is None) != (self.V is None):
            raise InvalidInputError("proper prior needs both mu and V")
        if self.mu is None:
            return
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if V.shape != (mu.size, mu.size):
            raise InvalidInputError(f"V must be {mu.size}x{mu.size}, got {V.shape}")
        if not np.allclose(V, V.T, rtol=1e-10, atol=1e-12):
            raise InvalidInputError("V must be symmetric")
        try:
            np.linalg.cholesky(V)
        except np.linalg.LinAlgError:
            raise InvalidInputError("V must be positive definite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "V", V)

    @classmethod
    def flat(cls, a_sigma: float = 2.0, b_sigma: float = 1.0) -> "BetaPrior":
        return cls(a_sigma=a_sigma, b_sigma=b_sigma)

    @classmethod
    def proper(cls, mu, V, a_sigma: float = 2.0, b_sigma: float = 1.0) -> "BetaPrior":
        return cls(a_sigma=a_sigma, b_sigma=b_sigma, mu=mu, V=V)

    @property
    def is_flat(self) -> bool:
        return self.mu is None

    def check_dim(self, p: int) -> None:
        if not self.is_flat and self.mu.size != p:
            raise InvalidInputError(f"prior has dimension {self.mu.size}, design has p={p}")

    @cached_property
    def _chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.V)

    def precision(self, p: int) -> np.ndarray:
        """V^{-1}; the zero matrix for the flat prior."""
        if self.is_flat:
            return np.zeros((p, p))
        return cho_solve((self._chol, True), np.eye(self.mu.size))

    def precision_mean(self, p: int) -> np.ndarray:
        if self.is_flat:
            return np.zeros(p)
        return cho_solve((self._chol, True), self.mu)

    def l_inv(self, v: np.ndarray) -> np.ndarray:
        return solve_triangular(self._chol, v, lower=True)

    def l_inv_t(self, v: np.ndarray) -> np.ndarray:
        return solve_triangular(self._chol.T, v, lower=False)

    def quad(self, beta: np.ndarray) -> float:
        if self.is_flat:
            return 0.0
        z = self.l_inv(np.asarray(beta, dtype=float) - self.mu)
        return float(z @ z)

    def mean_quad(self) -> float:
        """mu^T V^{-1} mu."""
        if self.is_flat:
            return 0.0
        z = self.l_inv(self.mu)
        return float(z @ z)


def draw_sigma2(rng: np.random.Generator, a: float, b: float) -> float:
    return float(stats.invgamma.rvs(a, scale=b, random_state=rng))
