"""Sparse NNGP factors on the correlation scale.

A training factor (A, D) represents the precision (I - A)^T D^{-1} (I - A):
row i of A holds the kriging weights of location i on its parents Pa[i] and
D[i] the conditional variance given them.

- target "latent": approximates M (pure correlation), d[0] = 1.
- target "response": approximates K = M + delta2*I, d[0] = 1 + delta2. The
  nugget enters the local covariance before solving, i.e. the NNGP is built
  for K itself and not for M.

Note on scale: a response-model factor written on the covariance scale would
carry sigma2 (D_S(1,1) = C(s1, s1) with the nugget); here everything is
divided by sigma2 so factors depend only on (phi, delta2), as the conjugate
systems require.

Local m x m systems are solved in batches of rows sharing a parent count.
A batch whose Cholesky fails, or a row whose conditional variance comes out
non-positive, is retried row by row with diagonal jitter 0, 1e-10, 1e-8.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular

from conjnngp.exceptions import CapacityError, FactorConstructionError, InvalidInputError
from conjnngp.quant.covariance import KernelSpec, corr
from conjnngp.quant.geometry import LocationSet, NeighborGraph

logger = logging.getLogger(__name__)

Target = Literal["latent", "response"]

JITTERS = (0.0, 1e-10, 1e-8)
ROW_BLOCK = 10_000


@dataclass(frozen=True, eq=False)
class NNGPFactor:
    a: sp.csr_matrix
    d: np.ndarray
    target: Target
    phi: float
    delta2: float = 0.0

    @property
    def n(self) -> int:
        return int(self.d.size)

    def i_minus_a(self) -> sp.csr_matrix:
        return (sp.identity(self.n, format="csr") - self.a).tocsr()

    def precision(self) -> sp.csr_matrix:
        """(I - A)^T D^{-1} (I - A), never densified."""
        b = self.i_minus_a()
        return (b.T @ sp.diags(1.0 / self.d) @ b).tocsr()

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """D^{-1/2} (I - A) v."""
        return (v - self.a @ v) / np.sqrt(self.d)

    def dense_covariance(self, cap: int | None = None) -> np.ndarray:
        """(I - A)^{-1} D (I - A)^{-T}; desk-scale only."""
        if cap is None:
            from conjnngp.config import settings
            cap = settings.dense_cap
        if self.n > cap:
            raise CapacityError(f"dense reconstruction capped at n={cap}, got n={self.n}")
        b_inv = solve_triangular(self.i_minus_a().toarray(), np.eye(self.n), lower=True, unit_diagonal=True)
        return (b_inv * self.d) @ b_inv.T


@dataclass(frozen=True, eq=False)
class PredictionFactor:
    a_u: sp.csr_matrix
    d_u: np.ndarray
    phi: float
    target: Target = "latent"
    delta2: float = 0.0

    @property
    def n_pred(self) -> int:
        return int(self.d_u.size)


def _pairwise(xy: np.ndarray) -> np.ndarray:
    diff = xy[..., :, None, :] - xy[..., None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def _solve_row(c_pp: np.ndarray, c: np.ndarray, diag: float, index: int,
               allow_zero: bool) -> tuple[np.ndarray, float]:
    """Kriging weights and conditional variance for one location, escalating jitter."""
    k = c.size
    for jitter in JITTERS:
        try:
            chol = np.linalg.cholesky(c_pp + jitter * np.eye(k))
        except np.linalg.LinAlgError:
            continue
        z = solve_triangular(chol, c, lower=True)
        w = solve_triangular(chol.T, z, lower=False)
        v = diag - float(z @ z)
        if v > 0 or (allow_zero and v > -1e-10):
            return w, max(v, 0.0)
    raise FactorConstructionError(index=index, jitter=JITTERS[-1])


def _krige_block(ref: np.ndarray, sites: np.ndarray, nbrs: np.ndarray, kernel: KernelSpec,
                 nugget: float, site_ids: np.ndarray, allow_zero: bool) -> tuple[np.ndarray, np.ndarray]:
    """Rows for `sites` whose parents (all the same count k) are ref[nbrs]."""
    k = nbrs.shape[1]
    diag = 1.0 + nugget
    pxy = ref[nbrs]
    c_pp = corr(kernel, _pairwise(pxy)) + nugget * np.eye(k)
    c = corr(kernel, np.sqrt(((pxy - sites[:, None, :]) ** 2).sum(axis=-1)))

    try:
        chol = np.linalg.cholesky(c_pp)
        z = np.linalg.solve(chol, c[..., None])[..., 0]
        w = np.linalg.solve(np.swapaxes(chol, -1, -2), z[..., None])[..., 0]
        v = diag - (z * z).sum(axis=1)
        redo = np.flatnonzero(~(v > 0) if not allow_zero else ~(v > -1e-10))
    except np.linalg.LinAlgError:
        w = np.empty_like(c)
        v = np.empty(c.shape[0])
        redo = np.arange(c.shape[0])

    for r in redo:
        w[r], v[r] = _solve_row(c_pp[r], c[r], diag, int(site_ids[r]), allow_zero)
    return w, np.maximum(v, 0.0)


def _assemble(ref: np.ndarray, sites: np.ndarray, graph: NeighborGraph, kernel: KernelSpec,
              nugget: float, n_cols: int, allow_zero: bool, workers: int):
    n = graph.n
    d = np.full(n, 1.0 + nugget)
    weights = np.zeros(graph.neighbors.shape)

    jobs = []
    for k in np.unique(graph.counts):
        if k == 0:
            continue
        rows = np.flatnonzero(graph.counts == k)
        for start in range(0, rows.size, ROW_BLOCK):
            jobs.append((int(k), rows[start:start + ROW_BLOCK]))

    def run(job):
        k, rows = job
        return rows, k, _krige_block(ref, sites[rows], graph.neighbors[rows, :k], kernel,
                                     nugget, rows, allow_zero)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for rows, k, (w, v) in pool.map(run, jobs):
            weights[rows, :k] = w
            d[rows] = v

    mask = np.arange(graph.neighbors.shape[1])[None, :] < graph.counts[:, None]
    row_idx = np.repeat(np.arange(n), graph.counts)
    a = sp.csr_matrix((weights[mask], (row_idx, graph.neighbors[mask])), shape=(n, n_cols))
    a.sort_indices()
    return a, d


def build_factor(locs: LocationSet, graph: NeighborGraph, kernel: KernelSpec,
                 target: Target = "latent", delta2: float = 0.0, workers: int = 1) -> NNGPFactor:
    if graph.kind != "training":
        raise InvalidInputError("build_factor needs a training graph")
    if graph.n != locs.n:
        raise InvalidInputError("graph and locations disagree on n")
    if target not in ("latent", "response"):
        raise InvalidInputError(f"unknown factor target '{target}'")
    nugget = 0.0
    if target == "response":
        if delta2 < 0:
            raise InvalidInputError("delta2 must be nonnegative")
        nugget = float(delta2)

    a, d = _assemble(locs.coords, locs.coords, graph, kernel, nugget, locs.n,
                     allow_zero=False, workers=workers)
    logger.debug("build_factor n=%d m=%d phi=%g target=%s nnz=%d", locs.n, graph.m, kernel.phi, target, a.nnz)
    return NNGPFactor(a=a, d=d, target=target, phi=kernel.phi, delta2=nugget)


def build_prediction_factor(train: LocationSet, pred: LocationSet, graph: NeighborGraph,
                            kernel: KernelSpec, target: Target = "latent", delta2: float = 0.0,
                            workers: int = 1) -> PredictionFactor:
    """A_u rows are kriging weights of each site on its m training parents;
    d_u = 1 - c^T C^{-1} c (zero at a site coinciding with a training site).
    With target "response" the parents carry the nugget (C(Pa, Pa) + delta2*I)
    and d_u includes it, which is the response model's predictor."""
    if graph.kind != "prediction":
        raise InvalidInputError("build_prediction_factor needs a prediction graph")
    if graph.n != pred.n:
        raise InvalidInputError("graph and prediction sites disagree on n")
    nugget = float(delta2) if target == "response" else 0.0
    a_u, d_u = _assemble(train.coords, pred.coords, graph, kernel, nugget, train.n,
                         allow_zero=True, workers=workers)
    # rounding residue at coincident sites
    d_u[d_u < 1e-12 * (1.0 + nugget)] = 0.0
    return PredictionFactor(a_u=a_u, d_u=d_u, phi=kernel.phi, target=target, delta2=nugget)


def log_det_factor(f: NNGPFactor) -> float:
    """log det of the approximated matrix, sum(log d): (I - A) is unit lower triangular."""
    return float(np.sum(np.log(f.d)))
