"""K-fold cross-validation of (phi, delta2) by pooled RMSPE.

Per fold k the training subset S[-k] is ordered and its neighbor graph built
once, together with the prediction graph of S[k] among S[-k]; every grid
cell reuses them. Latent factors depend on phi only, so the factor cache
serves all delta2 values of a phi column. Score for a cell:

    e = sum over folds of ||y(S[k]) - [X(S[k]) : A_u] gamma_hat||^2
    rmspe = sqrt(e / n)

A cell whose fit fails in any fold is reported as failed and excluded from
the argmin; ties go to the smaller delta2, then the smaller phi.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
import pandas as pd

from conjnngp.config import load_config_file
from conjnngp.exceptions import InvalidInputError, NNGPError
from conjnngp.modules.fitting.service import default_b_sigma
from conjnngp.modules.model_selection.schemas import CVConfig, CVReport, CVRow
from conjnngp.quant.conjugate import fit_latent, fit_response
from conjnngp.quant.covariance import HyperGrid, KernelSpec, default_grid, grid_from_bounds, refine_grid
from conjnngp.quant.geometry import (
    LocationSet,
    NeighborGraph,
    build_prediction_neighbors,
    build_training_neighbors,
    order_locations,
)
from conjnngp.quant.nig import BetaPrior
from conjnngp.quant.nngp_factor import build_factor, build_prediction_factor
from conjnngp.quant.prediction import predict_mean, predict_response_mean
from conjnngp.quant.rng import substream
from conjnngp.quant.sparse_solver import CGConfig
from conjnngp.services.cache import FactorCache
from conjnngp.services.io_service import read_spatial_csv, write_csv
from conjnngp.utils.timing import timed

logger = logging.getLogger(__name__)

Model = Literal["latent", "response"]


@dataclass(frozen=True, eq=False)
class FoldPlan:
    K: int
    assignment: np.ndarray
    seed: int

    def fold(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)


def make_folds(n: int, K: int, seed: int) -> FoldPlan:
    """Uniform random partition of range(n) into K folds whose sizes differ by <= 1."""
    if K < 2:
        raise InvalidInputError("need K >= 2 folds")
    if K > n:
        raise InvalidInputError(f"K={K} folds exceed n={n} observations")
    perm = substream(seed).permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = np.arange(n) % K
    return FoldPlan(K=K, assignment=labels, seed=int(seed))


@dataclass(frozen=True, eq=False)
class FoldGeometry:
    """`train_idx` lists original rows in fit order; train_locs is ordered to match."""

    k: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    train_locs: LocationSet
    test_locs: LocationSet
    train_graph: NeighborGraph
    pred_graph: NeighborGraph


def fold_geometry(locs: LocationSet, folds: FoldPlan, k: int, m: int, ordering: str = "coord",
                  workers: int = 1) -> FoldGeometry:
    test = folds.fold(k)
    train = np.flatnonzero(folds.assignment != k)
    if train.size < 2:
        raise InvalidInputError(f"fold {k} leaves fewer than 2 training locations")
    tl = order_locations(locs.subset(train), ordering)
    train_idx = train[tl.order]
    tl = LocationSet(coords=tl.coords, order=np.arange(train.size), id_map=tl.id_map, provenance=tl.provenance)
    test_locs = locs.subset(test)
    return FoldGeometry(
        k=k,
        train_idx=train_idx,
        test_idx=test,
        train_locs=tl,
        test_locs=test_locs,
        train_graph=build_training_neighbors(tl, m, workers=workers),
        pred_graph=build_prediction_neighbors(tl, test_locs, min(m, tl.n), workers=workers),
    )


def _data_scope(locs: LocationSet, folds: FoldPlan, m: int, ordering: str) -> str:
    h = hashlib.sha256(np.ascontiguousarray(locs.coords).tobytes())
    h.update(folds.assignment.tobytes())
    return f"{h.hexdigest()[:16]}|m={m}|ord={ordering}"


def _evict_dropped_levels(cache: FactorCache, scope: str, old: HyperGrid, new: HyperGrid) -> int:
    """Drop in-memory factors for phi (and, for response keys, delta2) levels
    the next stage no longer visits."""
    removed = 0
    for phi in set(old.phis) - set(new.phis):
        removed += cache.clear(f"*|{scope}|*|phi:{float(phi)!r}|*")
    for delta2 in set(old.delta2s) - set(new.delta2s):
        removed += cache.clear(f"*|{scope}|delta2:{float(delta2)!r}|*")
    logger.debug("cv stage=%d evicted=%d cached=%d", new.stage, removed, cache.size())
    return removed


def _score_cell(phi: float, delta2: float, X, y, geoms: list[FoldGeometry], prior: BetaPrior,
                cfg: CGConfig, model: Model, cache: FactorCache, scope: str) -> tuple[float, int, int]:
    """Returns (rmspe, fits, cg_iters)."""
    kernel = KernelSpec(phi=phi)
    e = 0.0
    iters = 0
    for g in geoms:
        Xtr, ytr = X[g.train_idx], y[g.train_idx]
        Xte, yte = X[g.test_idx], y[g.test_idx]
        if model == "latent":
            f = cache.get_or_build(
                FactorCache.build_key("factor", scope, fold=g.k, phi=phi, target="latent"),
                lambda: build_factor(g.train_locs, g.train_graph, kernel, "latent"))
            pf = cache.get_or_build(
                FactorCache.build_key("pfactor", scope, fold=g.k, phi=phi, target="latent"),
                lambda: build_prediction_factor(g.train_locs, g.test_locs, g.pred_graph, kernel))
            post = fit_latent(Xtr, ytr, f, delta2, prior, cfg)
            iters += post.cg.iters
            _, yhat = predict_mean(post, Xte, pf)
        else:
            f = cache.get_or_build(
                FactorCache.build_key("factor", scope, fold=g.k, phi=phi, delta2=delta2, target="response"),
                lambda: build_factor(g.train_locs, g.train_graph, kernel, "response", delta2))
            pf = build_prediction_factor(g.train_locs, g.test_locs, g.pred_graph, kernel, "response", delta2)
            yhat = predict_response_mean(fit_response(Xtr, ytr, f, prior), Xte, pf)
        e += float(np.sum((yte - yhat) ** 2))
    return float(np.sqrt(e / len(y))), len(geoms), iters


def cv_score(X, y, locs: LocationSet, m: int, grid: HyperGrid, folds: FoldPlan, prior: BetaPrior,
             cfg: CGConfig | None = None, model: Model = "latent", workers: int = 1,
             cache: Optional[FactorCache] = None, ordering: str = "coord",
             geometries: Optional[list[FoldGeometry]] = None) -> CVReport:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != locs.n or y.shape != (locs.n,) or folds.assignment.size != locs.n:
        raise InvalidInputError("design, response, locations and folds disagree on n")
    cfg = cfg or CGConfig()
    cache = cache or FactorCache.from_settings()

    searches = 0
    if geometries is None:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            geometries = list(pool.map(lambda k: fold_geometry(locs, folds, k, m, ordering), range(folds.K)))
        searches = 2 * folds.K
    scope = _data_scope(locs, folds, m, ordering)

    def run(cell: tuple[float, float]) -> tuple[CVRow, int]:
        phi, delta2 = cell
        try:
            score, fits, iters = _score_cell(phi, delta2, X, y, geometries, prior, cfg, model, cache, scope)
        except (NNGPError, np.linalg.LinAlgError) as exc:
            logger.warning("cv cell failed phi=%g delta2=%g error=%s", phi, delta2, exc)
            return CVRow(stage=grid.stage, phi=phi, delta2=delta2, status="failed",
                         error=f"{type(exc).__name__}: {exc}"), 0
        logger.debug("cv cell phi=%g delta2=%g rmspe=%.6g", phi, delta2, score)
        return CVRow(stage=grid.stage, phi=phi, delta2=delta2, rmspe=score, cg_iters=iters), fits

    cells = sorted(grid.cells())
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(run, cells))

    rows = [r for r, _ in results]
    ok = [r for r in rows if r.status == "ok"]
    if not ok:
        raise NNGPError(f"every grid cell failed at stage {grid.stage}")
    best = min(ok, key=lambda r: (r.rmspe, r.delta2, r.phi))
    logger.info("cv stage=%d model=%s best_phi=%g best_delta2=%g rmspe=%.6g failed=%d",
                grid.stage, model, best.phi, best.delta2, best.rmspe, len(rows) - len(ok))
    return CVReport(model=model, stage=grid.stage, K=folds.K, m=m, rows=rows, best_phi=best.phi,
                    best_delta2=best.delta2, best_rmspe=best.rmspe, n_neighbor_searches=searches,
                    n_fits=sum(f for _, f in results), n_failed=len(rows) - len(ok))


def cv_search(X, y, locs: LocationSet, m: int, grid: HyperGrid, folds: FoldPlan, prior: BetaPrior,
              cfg: CGConfig | None = None, model: Model = "latent", refine: int = 0, shrink: float = 0.5,
              workers: int = 1, cache: Optional[FactorCache] = None, ordering: str = "coord") -> list[CVReport]:
    """Coarse grid plus `refine` zoom stages around the running best; fold
    geometry is built once for all stages."""
    cache = cache or FactorCache.from_settings()
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        geoms = list(pool.map(lambda k: fold_geometry(locs, folds, k, m, ordering), range(folds.K)))
    scope = _data_scope(locs, folds, m, ordering)
    reports = []
    for stage in range(refine + 1):
        rep = cv_score(X, y, locs, m, grid, folds, prior, cfg, model, workers, cache, ordering, geoms)
        if stage == 0:
            rep = rep.model_copy(update={"n_neighbor_searches": 2 * folds.K})
        reports.append(rep)
        if stage < refine:
            nxt = refine_grid(grid, (rep.best_phi, rep.best_delta2), shrink)
            _evict_dropped_levels(cache, scope, grid, nxt)
            grid = nxt
    return reports


def overall_best(reports: list[CVReport]) -> CVReport:
    """The stage whose best cell wins across all stages, same tie rule."""
    return min(reports, key=lambda r: (r.best_rmspe, r.best_delta2, r.best_phi))


def resolve_grid(cfg: CVConfig, locs: LocationSet) -> HyperGrid:
    values = {"grid_phi": cfg.grid_phi, "grid_delta2": cfg.grid_delta2,
              "grid_phis": cfg.grid_phis, "grid_delta2s": cfg.grid_delta2s}
    if cfg.grid_file is not None:
        values.update(load_config_file(cfg.grid_file))
    if cfg.grid_default:
        return default_grid(locs, cfg.phi_levels, cfg.delta2_levels)
    if values["grid_phis"] is not None and values["grid_delta2s"] is not None:
        phis = tuple(sorted(float(v) for v in values["grid_phis"]))
        d2s = tuple(sorted(float(v) for v in values["grid_delta2s"]))
        return HyperGrid(phis=phis, delta2s=d2s, phi_bounds=(phis[0], phis[-1]),
                         delta2_bounds=(d2s[0], d2s[-1]))
    if values["grid_phi"] is not None and values["grid_delta2"] is not None:
        return grid_from_bounds(tuple(values["grid_phi"]), tuple(values["grid_delta2"]))
    if cfg.grid_file is not None:
        raise InvalidInputError(f"{cfg.grid_file}: needs grid.phi and grid.delta2 (or grid.phis and grid.delta2s)")
    return default_grid(locs, cfg.phi_levels, cfg.delta2_levels)


def reports_frame(reports: list[CVReport]) -> pd.DataFrame:
    rows = [r.model_dump() for rep in reports for r in rep.rows]
    return pd.DataFrame(rows, columns=["stage", "phi", "delta2", "rmspe", "status", "error", "cg_iters"])


def run_cv(cfg: CVConfig) -> list[CVReport]:
    timings: dict[str, float] = {}
    data = read_spatial_csv(cfg.data, project=cfg.project, intercept=cfg.intercept).train()
    y = data.y
    b_sigma = cfg.b_sigma if cfg.b_sigma is not None else default_b_sigma(y)
    prior = BetaPrior.flat(cfg.a_sigma, b_sigma)
    grid = resolve_grid(cfg, data.locs)
    folds = make_folds(data.n, cfg.K, cfg.seed)
    cgc = CGConfig(rel_tol=cfg.rel_tol, max_iter=cfg.max_iter, preconditioner=cfg.preconditioner)
    with timed("cv", timings):
        reports = cv_search(data.X, y, data.locs, cfg.m, grid, folds, prior, cgc, cfg.model,
                            cfg.refine, cfg.shrink, cfg.threads, ordering=cfg.ordering)
    write_csv(reports_frame(reports), cfg.out, "cv", cfg.resolved())
    return reports
