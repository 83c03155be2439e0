"""Simulation stage: dense full-GP truth written as a CSV the other stages read.

Columns: id, x, y, cov_1, response, w_true, split. The truth parameters go
into the config sidecar so `evaluate` can rebuild the true collapsed model.
"""

from __future__ import annotations

import logging
import time

import pandas as pd

from conjnngp.modules.simulation.schemas import SimulateConfig
from conjnngp.quant.simulate import SimParams, SimTruth, simulate_gp
from conjnngp.services.io_service import write_csv

logger = logging.getLogger(__name__)


def truth_frame(sim: SimTruth) -> pd.DataFrame:
    df = pd.DataFrame({"id": range(sim.n), "x": sim.coords[:, 0], "y": sim.coords[:, 1]})
    for j in range(1, sim.X.shape[1]):
        df[f"cov_{j}"] = sim.X[:, j]
    df["response"] = sim.y
    df["w_true"] = sim.w
    df["split"] = ["test" if t else "train" for t in sim.is_test]
    return df


def run_simulation(cfg: SimulateConfig) -> SimTruth:
    t0 = time.perf_counter()
    params = SimParams(beta=(cfg.beta0, cfg.beta1), sigma2=cfg.sigma2, tau2=cfg.tau2, phi=cfg.phi)
    sim = simulate_gp(cfg.n, params, seed=cfg.seed, n_test=cfg.n_test)
    write_csv(truth_frame(sim), cfg.out, "simulate", cfg.resolved())
    logger.info("phase=simulate seconds=%.3f n=%d n_test=%d", time.perf_counter() - t0, cfg.n, cfg.n_test)
    return sim
