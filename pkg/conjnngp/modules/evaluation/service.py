"""Evaluate stage: a Table-style metrics report from truth, draws and predictions.

Rows: one per parameter (mean and 95% interval, with the true value when the
truth file came from `simulate`), the selected phi and delta2, posterior-
averaged KL-D, MSE(w), coverage of the w intervals, held-out RMSPE and
interval coverage, and the wall-clock phases of the fit.
"""

from __future__ import annotations

import logging
from typing import Any, Optional

import numpy as np
import pandas as pd

from conjnngp.config import settings
from conjnngp.exceptions import InvalidInputError, SchemaError
from conjnngp.modules.evaluation.schemas import EvaluateConfig, MetricRow, MetricsReport
from conjnngp.modules.fitting.service import load_draws, order_data
from conjnngp.quant.conjugate import PosteriorDraws
from conjnngp.quant.covariance import KernelSpec
from conjnngp.quant.geometry import build_training_neighbors
from conjnngp.quant.metrics import (
    collapsed_model_builder,
    coverage,
    draw_intervals,
    empirical_kl,
    mse_w,
    parameter_summary,
    rmspe,
    true_collapsed,
)
from conjnngp.quant.nngp_factor import build_factor
from conjnngp.services.io_service import SpatialData, load_upstream_config, read_spatial_csv, read_table, write_csv

logger = logging.getLogger(__name__)


def _rows_by_id(ids: np.ndarray, wanted: np.ndarray, what: str) -> np.ndarray:
    pos = {int(i): k for k, i in enumerate(ids)}
    missing = [int(i) for i in wanted if int(i) not in pos]
    if missing:
        raise SchemaError(f"{what}: ids not found in truth file, e.g. {missing[:5]}")
    return np.array([pos[int(i)] for i in wanted], dtype=np.int64)


def _true_values(params: Optional[dict[str, Any]], p: int) -> dict[str, float]:
    if not params:
        return {}
    out = {"sigma2": params.get("sigma2"), "tau2": params.get("tau2"), "phi": params.get("phi")}
    betas = [params.get("beta0"), params.get("beta1")]
    for j in range(min(p, len(betas))):
        out[f"beta_{j}"] = betas[j]
    if out["sigma2"] and out["tau2"] is not None:
        out["delta2"] = out["tau2"] / out["sigma2"]
    return {k: v for k, v in out.items() if v is not None}


def build_metrics_report(truth: SpatialData, draws: PosteriorDraws, draw_ids: np.ndarray,
                         meta: dict[str, Any], params: Optional[dict[str, Any]] = None,
                         pred: Optional[pd.DataFrame] = None, level: float = 0.95,
                         kl: bool = True, workers: int = 1) -> MetricsReport:
    if draws.L < 1:
        raise InvalidInputError("draws file holds no successful draws")
    truth_vals = _true_values(params, draws.beta.shape[1])
    rows: list[MetricRow] = []

    for r in parameter_summary(draws, level).to_dict("records"):
        rows.append(MetricRow(metric=r["parameter"], value=r["mean"], lo95=r["lo95"], hi95=r["hi95"],
                              truth=truth_vals.get(r["parameter"])))
    rows.append(MetricRow(metric="phi", value=draws.phi, truth=truth_vals.get("phi")))
    rows.append(MetricRow(metric="delta2", value=draws.delta2, truth=truth_vals.get("delta2")))

    train = truth.train()
    if kl and params:
        if train.n > settings.dense_cap:
            logger.warning("evaluate KL-D skipped n_train=%d exceeds dense_cap=%d", train.n, settings.dense_cap)
        else:
            od = order_data(train, meta.get("ordering") or "coord")
            kernel = KernelSpec(family=meta.get("family") or "exponential", phi=draws.phi)
            graph = build_training_neighbors(od.locs, int(meta["m"]), workers=workers)
            factor = build_factor(od.locs, graph, kernel, "latent", workers=workers)
            beta_true = [params["beta0"], params["beta1"]][: od.X.shape[1]]
            q = true_collapsed(od.locs.coords, od.X, beta_true, params["sigma2"], params["tau2"], params["phi"])
            s = empirical_kl(draws, collapsed_model_builder(od.X, factor), q, workers=workers)
            rows.append(MetricRow(metric="KL-D", value=s.mean, lo95=s.lo95, hi95=s.hi95))

    if truth.w_true is not None and draws.w.shape[1] > 0:
        idx = _rows_by_id(truth.locs.id_map, draw_ids, "draws")
        w_true = truth.w_true[idx]
        rows.append(MetricRow(metric="MSE(w)", value=mse_w(w_true, draws.w.mean(axis=0))))
        lo, hi = draw_intervals(draws.w, level, axis=0)
        rows.append(MetricRow(metric="w_coverage", value=coverage(lo, hi, w_true)))

    if pred is not None:
        if "id" not in pred.columns:
            raise SchemaError("prediction file needs an id column")
        idx = _rows_by_id(truth.locs.id_map, pred["id"].to_numpy(), "predictions")
        y_true = truth.y[idx]
        rows.append(MetricRow(metric="RMSPE", value=rmspe(y_true, pred["mean_y"].to_numpy())))
        if {"lo95", "hi95"} <= set(pred.columns):
            rows.append(MetricRow(metric="y_coverage",
                                  value=coverage(pred["lo95"].to_numpy(), pred["hi95"].to_numpy(), y_true)))

    for phase, secs in sorted((meta.get("timings") or {}).items()):
        name = phase if phase.startswith("rss") else f"time_{phase}"
        rows.append(MetricRow(metric=name, value=float(secs)))
    return MetricsReport(rows=rows)


def run_evaluation(cfg: EvaluateConfig) -> MetricsReport:
    draws, draw_ids, meta = load_draws(cfg.draws)
    truth = read_spatial_csv(cfg.truth, project=meta.get("project"), intercept=cfg.intercept)
    params = load_upstream_config(cfg.truth, "simulate")
    if params is None:
        logger.info("evaluate truth has no simulate sidecar; KL-D and true values omitted")
    pred = read_table(cfg.pred) if cfg.pred else None
    report = build_metrics_report(truth, draws, draw_ids, meta, params, pred, cfg.level, cfg.kl, cfg.threads)
    df = pd.DataFrame([r.model_dump() for r in report.rows])
    write_csv(df, cfg.out, "evaluate", cfg.resolved(), notes=tuple(report.notes))
    return report
