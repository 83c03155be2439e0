"""Augmented normal equations of the conjugate latent model and their CG solver.

With gamma = [beta; w] the posterior precision (over sigma2) is

    [ X^T X / d2 + V^{-1}      X^T / d2                     ]
    [ X / d2                   I / d2 + (I-A)^T D^{-1} (I-A) ]

stored as three blocks: BB (p x p dense), the design X (BW = X^T / d2 is
applied implicitly, never stored twice) and WW (sparse, at most n(m+1)^2
nonzeros). The matrix is only ever touched through matvec.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field

from conjnngp.exceptions import CGConvergenceError, InvalidInputError
from conjnngp.quant.nig import BetaPrior
from conjnngp.quant.nngp_factor import NNGPFactor

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SparseSym:
    x: np.ndarray
    bb: np.ndarray
    ww: sp.csr_matrix
    delta2: float
    flat_prior: bool = True

    @property
    def n(self) -> int:
        return int(self.ww.shape[0])

    @property
    def p(self) -> int:
        return int(self.bb.shape[0])

    @property
    def dim(self) -> int:
        return self.n + self.p

    def matvec(self, v: np.ndarray) -> np.ndarray:
        p = self.p
        vb, vw = v[:p], v[p:]
        out = np.empty(self.dim)
        out[:p] = self.bb @ vb + (self.x.T @ vw) / self.delta2
        out[p:] = (self.x @ vb) / self.delta2 + self.ww @ vw
        return out

    def diagonal(self) -> np.ndarray:
        return np.concatenate([np.diag(self.bb), self.ww.diagonal()])


class CGConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    rel_tol: float = Field(default=1e-8, gt=0.0)
    max_iter: Optional[int] = Field(default=None, ge=1, description="None means 10 * dim")
    preconditioner: Literal["jacobi", "none"] = "jacobi"
    refresh: int = Field(default=50, ge=1, description="recompute r = b - Ax every this many iterations")


class CGResult(NamedTuple):
    x: np.ndarray
    iters: int
    rel_residual: float


def _check_inputs(X: np.ndarray, factor: NNGPFactor, delta2: float, prior: BetaPrior) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidInputError(f"design must be 2-D, got shape {X.shape}")
    if factor.target != "latent":
        raise InvalidInputError("normal equations need a latent-target factor")
    if X.shape[0] != factor.n:
        raise InvalidInputError(f"design has {X.shape[0]} rows, factor has n={factor.n}")
    if not delta2 > 0:
        raise InvalidInputError("delta2 must be positive")
    n, p = X.shape
    prior.check_dim(p)
    if prior.is_flat and p > 0 and p >= n:
        raise InvalidInputError(f"flat prior with p={p} >= n={n} is not identifiable")
    return X


def assemble_normal_equations(X, factor: NNGPFactor, delta2: float, prior: BetaPrior) -> SparseSym:
    X = _check_inputs(X, factor, delta2, prior)
    n, p = X.shape
    bb = X.T @ X / delta2 + prior.precision(p)
    ww = (sp.identity(n, format="csr") / delta2 + factor.precision()).tocsr()
    ww.sum_duplicates()
    ww.eliminate_zeros()
    logger.debug("assemble_normal_equations n=%d p=%d ww_nnz=%d", n, p, ww.nnz)
    return SparseSym(x=X, bb=bb, ww=ww, delta2=float(delta2), flat_prior=prior.is_flat)


def assemble_rhs(X, y, factor: NNGPFactor, delta2: float, prior: BetaPrior) -> np.ndarray:
    X = _check_inputs(X, factor, delta2, prior)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise InvalidInputError(f"response must have length {X.shape[0]}, got {y.shape}")
    return np.concatenate([X.T @ y / delta2 + prior.precision_mean(X.shape[1]), y / delta2])


def cg_solve(sys: SparseSym, b: np.ndarray, cfg: CGConfig | None = None,
             x0: np.ndarray | None = None) -> CGResult:
    """Preconditioned conjugate gradients on sys x = b.

    Returns only when ||b - A x|| / ||b|| <= rel_tol holds for a freshly
    computed residual; otherwise raises CGConvergenceError.
    """
    cfg = cfg or CGConfig()
    b = np.asarray(b, dtype=float)
    dim = sys.dim
    if b.shape != (dim,):
        raise InvalidInputError(f"rhs must have length {dim}, got {b.shape}")
    if not np.all(np.isfinite(b)):
        raise InvalidInputError("rhs contains NaN or Inf")
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return CGResult(np.zeros(dim), 0, 0.0)

    if cfg.preconditioner == "jacobi":
        diag = sys.diagonal()
        if np.any(~(diag > 0)):
            raise InvalidInputError("matrix diagonal is not positive; not positive definite")
        m_inv = 1.0 / diag
    else:
        m_inv = np.ones(dim)
    max_iter = cfg.max_iter or 10 * dim

    x = np.zeros(dim) if x0 is None else np.array(x0, dtype=float)
    r = b - sys.matvec(x) if x0 is not None else b.copy()
    z = m_inv * r
    p = z.copy()
    rz = float(r @ z)
    rel = float(np.linalg.norm(r)) / b_norm

    for it in range(1, max_iter + 1):
        q = sys.matvec(p)
        pq = float(p @ q)
        if not np.isfinite(pq) or pq <= 0.0:
            raise CGConvergenceError(it, rel, reason="broke down (non-finite or non-positive curvature)")
        alpha = rz / pq
        x += alpha * p
        if it % cfg.refresh == 0:
            r = b - sys.matvec(x)
        else:
            r -= alpha * q
        rel = float(np.linalg.norm(r)) / b_norm
        if not np.isfinite(rel):
            raise CGConvergenceError(it, rel, reason="produced NaN/Inf")
        if rel <= cfg.rel_tol:
            r = b - sys.matvec(x)
            rel = float(np.linalg.norm(r)) / b_norm
            if rel <= cfg.rel_tol:
                logger.debug("cg_solve iters=%d rel_residual=%.3e dim=%d", it, rel, dim)
                return CGResult(x, it, rel)
        z = m_inv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    raise CGConvergenceError(max_iter, rel)
