"""Run parameters and report shapes for cross-validation."""

from __future__ import annotations

from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from conjnngp.config import RunConfig, settings


class CVConfig(RunConfig):
    data: Path
    out: Path
    m: int = Field(default=10, ge=1)
    K: int = Field(default=5, ge=2)
    family: Literal["exponential"] = "exponential"
    grid_default: bool = False
    grid_file: Optional[Path] = None
    grid_phi: Optional[Tuple[float, float, int]] = None
    grid_delta2: Optional[Tuple[float, float, int]] = None
    grid_phis: Optional[List[float]] = None
    grid_delta2s: Optional[List[float]] = None
    phi_levels: int = Field(default=5, ge=1)
    delta2_levels: int = Field(default=5, ge=1)
    refine: int = Field(default=0, ge=0)
    shrink: float = Field(default=0.5, gt=0.0, le=1.0)
    model: Literal["latent", "response"] = "latent"
    seed: int = 0
    ordering: str = "coord"
    project: Optional[Literal["sinusoidal"]] = None
    intercept: bool = True
    a_sigma: float = Field(default=2.0, gt=0.0)
    b_sigma: Optional[float] = Field(default=None, gt=0.0)
    rel_tol: float = Field(default_factory=lambda: settings.cg_rel_tol, gt=0.0)
    max_iter: Optional[int] = Field(default=None, ge=1)
    preconditioner: Literal["jacobi", "none"] = "jacobi"

    @model_validator(mode="after")
    def _one_grid_source(self):
        if self.grid_default and self.grid_file is not None:
            raise ValueError("--grid-default and --grid-file are mutually exclusive")
        return self


class CVRow(BaseModel):
    stage: int
    phi: float
    delta2: float
    rmspe: Optional[float] = None
    status: Literal["ok", "failed"] = "ok"
    error: Optional[str] = None
    cg_iters: int = 0


class CVReport(BaseModel):
    model: Literal["latent", "response"]
    stage: int
    K: int
    m: int
    rows: List[CVRow]
    best_phi: float
    best_delta2: float
    best_rmspe: float
    n_neighbor_searches: int
    n_fits: int
    n_failed: int
