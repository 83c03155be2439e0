"""Dense full-GP synthetic data on the unit square (the ground-truth oracle).

y = X beta + w + eps, X = [1, x1] with x1 ~ N(0, 1),
w ~ N(0, sigma2 M) with M the exponential correlation, eps ~ N(0, tau2 I).
O(n^3); capped by settings.dense_cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist

from conjnngp.exceptions import CapacityError, InvalidInputError
from conjnngp.quant.covariance import KernelSpec, corr
from conjnngp.quant.rng import substream


class SimParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta: Tuple[float, ...] = (1.0, -5.0)
    sigma2: float = Field(default=2.0, gt=0.0)
    tau2: float = Field(default=0.2, ge=0.0)
    phi: float = Field(default=16.0, gt=0.0)


@dataclass(frozen=True, eq=False)
class SimTruth:
    coords: np.ndarray
    X: np.ndarray
    beta: np.ndarray
    w: np.ndarray
    eps: np.ndarray
    y: np.ndarray
    params: SimParams
    seed: int
    is_test: np.ndarray

    @property
    def n(self) -> int:
        return int(self.y.size)


def simulate_gp(n: int, params: SimParams | None = None, seed: int = 0, n_test: int = 0,
                cap: int | None = None) -> SimTruth:
    params = params or SimParams()
    if cap is None:
        from conjnngp.config import settings
        cap = settings.dense_cap
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if n > cap:
        raise CapacityError(f"dense simulation capped at n={cap}, got n={n}")
    if not 0 <= n_test < n:
        raise InvalidInputError(f"n_test must be in [0, n), got {n_test}")
    p = len(params.beta)
    if p < 1:
        raise InvalidInputError("beta must have at least the intercept")

    rng = substream(seed)
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    X = np.column_stack([np.ones(n)] + [rng.standard_normal(n) for _ in range(p - 1)])
    m = corr(KernelSpec(phi=params.phi), cdist(coords, coords))
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(m + 1e-10 * np.eye(n))
    w = np.sqrt(params.sigma2) * (chol @ rng.standard_normal(n))
    eps = np.sqrt(params.tau2) * rng.standard_normal(n)
    beta = np.asarray(params.beta, dtype=float)
    y = X @ beta + w + eps

    is_test = np.zeros(n, dtype=bool)
    if n_test:
        is_test[rng.choice(n, size=n_test, replace=False)] = True
    return SimTruth(coords=coords, X=X, beta=beta, w=w, eps=eps, y=y, params=params,
                    seed=int(seed), is_test=is_test)
