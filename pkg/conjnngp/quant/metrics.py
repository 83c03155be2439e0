"""Model-comparison and prediction metrics.

Args/Inputs:
- GaussianSpec pairs (dense, desk scale) for KL-D.
- Posterior / predictive draws with the draw index on axis 0.

Provides:
- kl_divergence, empirical_kl (posterior-averaged KL-D on the collapsed space)
- collapsed_model_builder: draw -> N(X beta, sigma2 M~ + tau2 I)
- rmspe, mse_w (sum of squares, not mean), coverage, draw_intervals
- parameter_summary: mean and 2.5/97.5 percentiles per parameter
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from conjnngp.exceptions import InvalidInputError
from conjnngp.quant.conjugate import PosteriorDraws
from conjnngp.quant.covariance import KernelSpec, corr
from conjnngp.quant.nngp_factor import NNGPFactor

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GaussianSpec:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise InvalidInputError(f"covariance must be {mean.size}x{mean.size}, got {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
            raise InvalidInputError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n(self) -> int:
        return int(self.mean.size)

    @cached_property
    def chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise InvalidInputError("covariance is not positive definite")


def kl_divergence(P: GaussianSpec, Q: GaussianSpec) -> float:
    """KL(Q || P) = 1/2 [tr(S_P^-1 S_Q) - log det(S_P^-1 S_Q) + dm^T S_P^-1 dm - n]."""
    if P.n != Q.n:
        raise InvalidInputError(f"dimension mismatch {P.n} vs {Q.n}")
    lp, lq = P.chol, Q.chol
    m = solve_triangular(lp, lq, lower=True)
    z = solve_triangular(lp, P.mean - Q.mean, lower=True)
    logdet = 2.0 * (np.log(np.diag(lq)).sum() - np.log(np.diag(lp)).sum())
    kl = 0.5 * (np.sum(m * m) - logdet + z @ z - P.n)
    return float(max(kl, 0.0))


class KLSummary(NamedTuple):
    mean: float
    lo95: float
    hi95: float
    values: np.ndarray
    degenerate: bool


ModelBuilder = Callable[[np.ndarray, float, float], GaussianSpec]


def empirical_kl(draws: PosteriorDraws, builder: ModelBuilder, truth: GaussianSpec,
                 workers: int = 1) -> KLSummary:
    L = draws.L
    if L < 1:
        raise InvalidInputError("empirical KL-D needs at least one draw")

    def one(l: int) -> float:
        return kl_divergence(builder(draws.beta[l], float(draws.sigma2[l]), float(draws.tau2[l])), truth)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        values = np.fromiter(pool.map(one, range(L)), dtype=float, count=L)
    if L < 2:
        logger.warning("empirical_kl L=1 percentiles are degenerate")
    lo, hi = np.percentile(values, [2.5, 97.5])
    return KLSummary(float(values.mean()), float(lo), float(hi), values, L < 2)


def collapsed_model_builder(X: np.ndarray, factor: NNGPFactor) -> ModelBuilder:
    """Fitted collapsed-space model for one draw: N(X beta, sigma2 M~ + tau2 I)
    with M~ the correlation the latent factor implies."""
    m_tilde = factor.dense_covariance()
    eye = np.eye(factor.n)
    X = np.asarray(X, dtype=float)

    def build(beta: np.ndarray, sigma2: float, tau2: float) -> GaussianSpec:
        return GaussianSpec(mean=X @ beta, cov=sigma2 * m_tilde + tau2 * eye)

    return build


def true_collapsed(coords: np.ndarray, X: np.ndarray, beta, sigma2: float, tau2: float,
                   phi: float) -> GaussianSpec:
    """N(X beta, sigma2 M + tau2 I) under the full exponential GP."""
    from conjnngp.config import settings

    coords = np.asarray(coords, dtype=float)
    if coords.shape[0] > settings.dense_cap:
        from conjnngp.exceptions import CapacityError
        raise CapacityError(f"dense truth capped at n={settings.dense_cap}")
    m = corr(KernelSpec(phi=phi), cdist(coords, coords))
    return GaussianSpec(mean=np.asarray(X, float) @ np.asarray(beta, float),
                        cov=sigma2 * m + tau2 * np.eye(coords.shape[0]))


def _pair(truth, other) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(truth, dtype=float).ravel()
    b = np.asarray(other, dtype=float).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch {a.size} vs {b.size}")
    return a, b


def rmspe(truth, pred) -> float:
    a, b = _pair(truth, pred)
    if a.size == 0:
        raise InvalidInputError("rmspe of empty vectors")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mse_w(truth, post_mean) -> float:
    """Sum of squared errors (the scale on which MSE(w) is reported)."""
    a, b = _pair(truth, post_mean)
    return float(np.sum((a - b) ** 2))


def draw_intervals(samples: np.ndarray, level: float = 0.95, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(np.asarray(samples, dtype=float), [tail, 100.0 - tail], axis=axis)
    return lo, hi


def coverage(lo, hi, truth) -> float:
    t, lo = _pair(truth, lo)
    _, hi = _pair(truth, hi)
    return float(np.mean((lo <= t) & (t <= hi)))


def parameter_summary(draws: PosteriorDraws, level: float = 0.95) -> pd.DataFrame:
    cols = {f"beta_{j}": draws.beta[:, j] for j in range(draws.beta.shape[1])}
    cols["sigma2"] = draws.sigma2
    cols["tau2"] = draws.tau2
    rows = []
    for name, v in cols.items():
        lo, hi = draw_intervals(v, level)
        rows.append({"parameter": name, "mean": float(np.mean(v)), "lo95": float(lo), "hi95": float(hi)})
    return pd.DataFrame(rows)
