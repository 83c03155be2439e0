"""Predict stage.

Small site sets (<= settings.exact_predict_cap) get the exact multivariate-t
summary; larger ones, or any run given posterior draws, go through the
two-stage sampler, streamed in chunks of settings.predict_block sites.
Output columns: id, x, y, mean_w, mean_y, sd_y, lo95, hi95.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
import pandas as pd

from conjnngp.config import settings
from conjnngp.exceptions import InvalidInputError
from conjnngp.modules.fitting.service import load_draws, load_posterior
from conjnngp.modules.prediction.schemas import PredictConfig
from conjnngp.quant.conjugate import NIGPosterior, PosteriorDraws, sample_latent
from conjnngp.quant.covariance import KernelSpec
from conjnngp.quant.geometry import LocationSet, build_prediction_neighbors
from conjnngp.quant.nngp_factor import build_prediction_factor
from conjnngp.quant.prediction import predictive_t_exact, sample_predictive, summarize_draws
from conjnngp.quant.sparse_solver import CGConfig
from conjnngp.services.io_service import read_spatial_csv, write_csv
from conjnngp.utils.binary_io import write_container
from conjnngp.utils.timing import timed

logger = logging.getLogger(__name__)


def _posterior_draws(cfg: PredictConfig, post: NIGPosterior, ids: np.ndarray, cgc: CGConfig) -> PosteriorDraws:
    if cfg.draws is None:
        return sample_latent(post, cfg.L, cfg.seed, cgc, workers=cfg.threads)
    draws, draw_ids, _ = load_draws(cfg.draws)
    if not np.array_equal(draw_ids, ids):
        raise InvalidInputError("draws file does not cover the posterior's training sites in fit order")
    if not np.isclose(draws.phi, post.phi, rtol=1e-12):
        raise InvalidInputError(f"draws were taken at phi={draws.phi}, posterior has phi={post.phi}")
    return draws


def run_prediction(cfg: PredictConfig) -> pd.DataFrame:
    timings: dict[str, float] = {}
    with timed("load_posterior", timings):
        post, od, meta = load_posterior(cfg.posterior, workers=cfg.threads)
    sites = read_spatial_csv(cfg.sites, project=cfg.project or meta.get("project"),
                             intercept=cfg.intercept, require_response=False)
    if sites.split is not None:
        sites = sites.test()
    if sites.n == 0:
        raise InvalidInputError(f"{cfg.sites}: no prediction sites")
    if tuple(sites.covariates) != tuple(od.covariates):
        raise InvalidInputError(f"site covariates {list(sites.covariates)} differ from fit covariates "
                                f"{list(od.covariates)}")

    m = cfg.m or int(meta["m"])
    kernel = KernelSpec(family=meta["family"], phi=post.phi)
    cgc = CGConfig(rel_tol=meta["rel_tol"], max_iter=meta["max_iter"], preconditioner=meta["preconditioner"])
    mode = cfg.mode
    if mode == "auto":
        mode = "exact" if sites.n <= settings.exact_predict_cap and cfg.draws is None else "sample"

    block = settings.predict_block
    frames: list[pd.DataFrame] = []
    w_parts: list[np.ndarray] = []
    y_parts: list[np.ndarray] = []
    draws: Optional[PosteriorDraws] = None
    if mode == "sample":
        with timed("draws", timings):
            draws = _posterior_draws(cfg, post, od.locs.id_map, cgc)

    with timed("predict", timings):
        for chunk, start in enumerate(range(0, sites.n, block)):
            idx = np.arange(start, min(start + block, sites.n))
            part: LocationSet = sites.locs.subset(idx)
            graph = build_prediction_neighbors(od.locs, part, m, workers=cfg.threads)
            pf = build_prediction_factor(od.locs, part, graph, kernel, workers=cfg.threads)
            Xu = sites.X[idx]
            if mode == "exact":
                frames.append(predictive_t_exact(post, Xu, pf, cfg=cgc, level=cfg.level).to_frame())
                continue
            pdraws = sample_predictive(draws, Xu, pf, post.delta2, cfg.seed, block=block,
                                       workers=cfg.threads, first_block=chunk)
            frames.append(summarize_draws(pdraws, cfg.level))
            if cfg.draws_out:
                w_parts.append(pdraws.w)
                y_parts.append(pdraws.y)

    summary = pd.concat(frames, ignore_index=True)
    out = pd.DataFrame({"id": sites.locs.id_map, "x": sites.locs.coords[:, 0], "y": sites.locs.coords[:, 1]})
    out = pd.concat([out, summary], axis=1)
    write_csv(out, cfg.out, "predict", cfg.resolved())

    if cfg.draws_out:
        if mode != "sample":
            logger.warning("predict draws_out ignored in exact mode")
        else:
            write_container(cfg.draws_out, "predictive_draws",
                            {"w": np.vstack(w_parts), "y": np.vstack(y_parts), "ids": sites.locs.id_map},
                            meta={"seed": cfg.seed, "phi": post.phi, "delta2": post.delta2, "m": m})
    logger.info("predict mode=%s n_sites=%d m=%d", mode, sites.n, m)
    return out
