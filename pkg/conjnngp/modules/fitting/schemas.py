"""Run parameters and report shapes for the fit stage."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from conjnngp.config import RunConfig, settings


class FitConfig(RunConfig):
    data: Path
    m: int = Field(default=10, ge=1)
    family: Literal["exponential"] = "exponential"
    phi: float = Field(gt=0.0)
    delta2: float = Field(gt=0.0)
    a_sigma: float = Field(default=2.0, gt=0.0)
    b_sigma: Optional[float] = Field(default=None, gt=0.0, description="None means the sample variance of y")
    L: int = Field(default=300, ge=1)
    seed: int = 0
    ordering: str = "coord"
    project: Optional[Literal["sinusoidal"]] = None
    intercept: bool = True
    rel_tol: float = Field(default_factory=lambda: settings.cg_rel_tol, gt=0.0)
    max_iter: Optional[int] = Field(default=None, ge=1)
    preconditioner: Literal["jacobi", "none"] = "jacobi"
    draws_out: Optional[Path] = None
    draws_w_ids: Optional[List[int]] = None
    summary_out: Optional[Path] = None
    posterior_out: Optional[Path] = None


class ParameterRow(BaseModel):
    parameter: str
    mean: float
    lo95: float
    hi95: float


class FitSummary(BaseModel):
    n: int
    p: int
    m: int
    phi: float
    delta2: float
    covariates: List[str]
    a_star: float
    b_star: float
    sigma2_mean: Optional[float] = None
    beta_hat: List[float]
    w_hat_head: List[float]
    cg_iters: int
    cg_rel_residual: float
    L: int
    failed_draws: List[int]
    parameters: List[ParameterRow]
    timings: Dict[str, float]
