"""Fit stage: order -> neighbors -> latent factor -> conjugate fit -> draws.

Also owns the on-disk posterior bundle and draw files, since predict and
evaluate read what fit writes. Everything is stored in fit (ordered)
position; the `ids` array maps positions back to input rows.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

from conjnngp.exceptions import InvalidInputError, SchemaError
from conjnngp.modules.fitting.schemas import FitConfig, FitSummary, ParameterRow
from conjnngp.quant.conjugate import NIGPosterior, PosteriorDraws, fit_latent, sample_latent
from conjnngp.quant.covariance import KernelSpec
from conjnngp.quant.geometry import LocationSet, build_training_neighbors, order_locations
from conjnngp.quant.metrics import parameter_summary
from conjnngp.quant.nig import BetaPrior
from conjnngp.quant.nngp_factor import build_factor
from conjnngp.quant.sparse_solver import CGConfig, assemble_normal_equations
from conjnngp.services.io_service import (
    SpatialData,
    load_upstream_config,
    provenance_line,
    read_spatial_csv,
    read_table,
    write_config_sidecar,
    write_csv,
)
from conjnngp.utils.binary_io import read_container, write_container
from conjnngp.utils.timing import PeakMemory, rss_mb, timed

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OrderedData:
    locs: LocationSet
    X: np.ndarray
    y: np.ndarray
    covariates: tuple[str, ...]


@dataclass(eq=False)
class FitResult:
    posterior: NIGPosterior
    draws: PosteriorDraws
    data: OrderedData
    summary: FitSummary
    timings: dict[str, float] = field(default_factory=dict)


def order_data(data: SpatialData, ordering: str = "coord") -> OrderedData:
    if data.y is None:
        raise SchemaError("training data needs a response column")
    locs = order_locations(data.locs, ordering)
    return OrderedData(locs=locs, X=data.X[locs.order], y=data.y[locs.order], covariates=data.covariates)


def cg_config(cfg: FitConfig) -> CGConfig:
    return CGConfig(rel_tol=cfg.rel_tol, max_iter=cfg.max_iter, preconditioner=cfg.preconditioner)


def default_b_sigma(y: np.ndarray) -> float:
    v = float(np.var(y, ddof=1)) if y.size > 1 else 0.0
    return v if v > 0 else 1.0


def fit_dataset(cfg: FitConfig) -> FitResult:
    timings: dict[str, float] = {}
    data = read_spatial_csv(cfg.data, project=cfg.project, intercept=cfg.intercept).train()
    od = order_data(data, cfg.ordering)
    prior = BetaPrior.flat(cfg.a_sigma, cfg.b_sigma if cfg.b_sigma is not None else default_b_sigma(od.y))
    kernel = KernelSpec(family=cfg.family, phi=cfg.phi)
    cgc = cg_config(cfg)

    with PeakMemory() as mem:
        with timed("neighbors", timings):
            graph = build_training_neighbors(od.locs, cfg.m, workers=cfg.threads)
        with timed("factor", timings):
            factor = build_factor(od.locs, graph, kernel, "latent", workers=cfg.threads)
        with timed("fit", timings):
            post = fit_latent(od.X, od.y, factor, cfg.delta2, prior, cgc)
        with timed("draws", timings):
            draws = sample_latent(post, cfg.L, cfg.seed, cgc, workers=cfg.threads)
    timings["rss_mb"] = rss_mb()
    timings["rss_peak_mb"] = mem.peak_mb
    if draws.failed:
        logger.warning("fit failed_draws=%d of L=%d", len(draws.failed), cfg.L)

    summary = build_summary(post, draws, od, cfg.m, timings)
    result = FitResult(posterior=post, draws=draws, data=od, summary=summary, timings=timings)
    meta = _meta(cfg, post, od)
    if cfg.posterior_out:
        save_posterior(cfg.posterior_out, post, od, meta, cfg.resolved())
    if cfg.draws_out:
        save_draws(cfg.draws_out, draws, od.locs.id_map, meta, cfg.resolved(), cfg.draws_w_ids)
        timings_path(cfg.draws_out).write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if cfg.summary_out:
        write_summary(cfg.summary_out, summary, cfg.resolved())
    return result


def build_summary(post: NIGPosterior, draws: PosteriorDraws, od: OrderedData, m: int,
                  timings: dict[str, float]) -> FitSummary:
    rows = parameter_summary(draws) if draws.L else pd.DataFrame(columns=["parameter", "mean", "lo95", "hi95"])
    return FitSummary(
        n=post.n, p=post.p, m=m, phi=post.phi, delta2=post.delta2,
        covariates=list(od.covariates),
        a_star=post.a_star, b_star=post.b_star,
        sigma2_mean=post.sigma2_mean if post.a_star > 1 else None,
        beta_hat=post.beta_hat.tolist(), w_hat_head=post.w_hat[:5].tolist(),
        cg_iters=post.cg.iters if post.cg else 0,
        cg_rel_residual=post.cg.rel_residual if post.cg else 0.0,
        L=draws.L, failed_draws=list(draws.failed),
        parameters=[ParameterRow(**r) for r in rows.to_dict("records")],
        timings=timings,
    )


def write_summary(path: Path, summary: FitSummary, config: dict[str, Any]) -> None:
    digest = write_config_sidecar(path, "fit", config)
    lines = [provenance_line("fit", digest)]
    for key in ("n", "p", "m", "phi", "delta2", "a_star", "b_star", "sigma2_mean", "cg_iters",
                "cg_rel_residual", "L"):
        lines.append(f"{key}={getattr(summary, key)}")
    lines.append("beta_hat=" + ",".join(f"{b:.6g}" for b in summary.beta_hat))
    lines.append("w_hat_head=" + ",".join(f"{w:.6g}" for w in summary.w_hat_head))
    lines.append("failed_draws=" + ",".join(str(i) for i in summary.failed_draws))
    lines.append("")
    lines.append(f"{'parameter':<10} {'mean':>12} {'lo95':>12} {'hi95':>12}")
    for r in summary.parameters:
        lines.append(f"{r.parameter:<10} {r.mean:>12.5g} {r.lo95:>12.5g} {r.hi95:>12.5g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _meta(cfg: FitConfig, post: NIGPosterior, od: OrderedData) -> dict[str, Any]:
    return {
        "phi": post.phi, "delta2": post.delta2, "m": cfg.m, "family": cfg.family,
        "ordering": cfg.ordering, "seed": cfg.seed, "a_star": post.a_star, "b_star": post.b_star,
        "a_sigma": post.prior.a_sigma, "b_sigma": post.prior.b_sigma,
        "covariates": list(od.covariates), "project": cfg.project,
        "rel_tol": cfg.rel_tol, "max_iter": cfg.max_iter, "preconditioner": cfg.preconditioner,
    }


# Posterior bundle

def save_posterior(path: Path, post: NIGPosterior, od: OrderedData, meta: dict[str, Any],
                   config: dict[str, Any]) -> None:
    write_container(path, "posterior", {
        "coords": od.locs.coords, "ids": od.locs.id_map, "X": od.X, "y": od.y,
        "gamma_hat": post.gamma_hat,
    }, meta=meta)
    write_config_sidecar(path, "fit", config)


def load_posterior(path: Path, workers: int = 1) -> tuple[NIGPosterior, OrderedData, dict[str, Any]]:
    """Rebuild the posterior from a bundle; the factor is recomputed from
    (coords, m, phi), which is deterministic, so no CG solve is repeated."""
    meta, arr = read_container(path, kind="posterior")
    locs = LocationSet(coords=arr["coords"], order=np.arange(arr["ids"].size), id_map=arr["ids"])
    od = OrderedData(locs=locs, X=arr["X"], y=arr["y"], covariates=tuple(meta["covariates"]))
    prior = BetaPrior.flat(meta["a_sigma"], meta["b_sigma"])
    kernel = KernelSpec(family=meta["family"], phi=meta["phi"])
    graph = build_training_neighbors(locs, int(meta["m"]), workers=workers)
    factor = build_factor(locs, graph, kernel, "latent", workers=workers)
    sys = assemble_normal_equations(od.X, factor, meta["delta2"], prior)
    post = NIGPosterior(gamma_hat=arr["gamma_hat"], sys=sys, a_star=float(meta["a_star"]),
                        b_star=float(meta["b_star"]), delta2=float(meta["delta2"]), phi=float(meta["phi"]),
                        factor=factor, prior=prior)
    return post, od, meta


# Draw files: binary container unless the path ends in .csv

def save_draws(path: Path, draws: PosteriorDraws, ids: np.ndarray, meta: dict[str, Any],
               config: dict[str, Any], w_ids: Optional[list[int]] = None) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        cols = np.arange(ids.size)
        if w_ids is not None:
            pos = {int(i): k for k, i in enumerate(ids)}
            missing = [i for i in w_ids if i not in pos]
            if missing:
                raise InvalidInputError(f"draws_w_ids not in training data: {missing[:5]}")
            cols = np.array([pos[i] for i in w_ids], dtype=np.int64)
        df = pd.DataFrame({"draw": draws.draw_index, "sigma2": draws.sigma2, "tau2": draws.tau2})
        for j in range(draws.beta.shape[1]):
            df[f"beta_{j}"] = draws.beta[:, j]
        wdf = pd.DataFrame(draws.w[:, cols], columns=[f"w_{int(ids[c])}" for c in cols])
        write_csv(pd.concat([df, wdf], axis=1), path, "fit", config)
        return
    write_container(path, "posterior_draws", {
        "beta": draws.beta, "w": draws.w, "sigma2": draws.sigma2, "draw_index": draws.draw_index,
        "iters": draws.iters, "rel_residuals": draws.rel_residuals, "ids": ids,
    }, meta={**meta, "failed": list(draws.failed), "model": draws.model})
    write_config_sidecar(path, "fit", config)


def load_draws(path: Path) -> tuple[PosteriorDraws, np.ndarray, dict[str, Any]]:
    """Returns (draws, ids of the w columns, meta)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        df = read_table(path)
        conf = load_upstream_config(path, "fit")
        if conf is None:
            raise SchemaError(f"{path}: missing or foreign {path.name}.config.json sidecar")
        beta_cols = sorted((c for c in df.columns if c.startswith("beta_")), key=lambda c: int(c[5:]))
        w_cols = [c for c in df.columns if c.startswith("w_")]
        ids = np.array([int(c[2:]) for c in w_cols], dtype=np.int64)
        sigma2 = df["sigma2"].to_numpy(dtype=float)
        draws = PosteriorDraws(
            beta=df[beta_cols].to_numpy(dtype=float), w=df[w_cols].to_numpy(dtype=float), sigma2=sigma2,
            delta2=float(conf["delta2"]), phi=float(conf["phi"]), seed=int(conf["seed"]),
            draw_index=df["draw"].to_numpy(dtype=np.int64), iters=np.zeros(sigma2.size, dtype=np.int64),
            rel_residuals=np.zeros(sigma2.size),
        )
        meta = {k: conf.get(k) for k in ("phi", "delta2", "m", "family", "ordering", "seed", "project")}
        meta["timings"] = read_timings(path)
        return draws, ids, meta

    meta, arr = read_container(path, kind="posterior_draws")
    draws = PosteriorDraws(
        beta=arr["beta"], w=arr["w"], sigma2=arr["sigma2"], delta2=float(meta["delta2"]),
        phi=float(meta["phi"]), seed=int(meta["seed"]), draw_index=arr["draw_index"],
        iters=arr["iters"], rel_residuals=arr["rel_residuals"], failed=tuple(meta.get("failed", ())),
        model=meta.get("model", "latent"),
    )
    meta["timings"] = read_timings(path)
    return draws, arr["ids"], meta


def timings_path(path: Path) -> Path:
    """Wall-clock phases live beside the draws, not inside them, so draw files
    are byte-identical across reruns."""
    return Path(f"{path}.timings.json")


def read_timings(path: Path) -> dict[str, float]:
    tp = timings_path(path)
    if not tp.exists():
        return {}
    return json.loads(tp.read_text(encoding="utf-8"))
