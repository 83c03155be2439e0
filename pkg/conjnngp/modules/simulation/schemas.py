"""Run parameters for the simulate stage."""

from __future__ import annotations

from pathlib import Path

from pydantic import Field

from conjnngp.config import RunConfig


class SimulateConfig(RunConfig):
    n: int = Field(default=1200, ge=2)
    n_test: int = Field(default=200, ge=0)
    seed: int = 0
    beta0: float = 1.0
    beta1: float = -5.0
    sigma2: float = Field(default=2.0, gt=0.0)
    tau2: float = Field(default=0.2, ge=0.0)
    phi: float = Field(default=16.0, gt=0.0)
    out: Path
