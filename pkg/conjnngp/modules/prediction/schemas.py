"""Run parameters for the predict stage."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

from pydantic import Field

from conjnngp.config import RunConfig


class PredictConfig(RunConfig):
    posterior: Path
    sites: Path
    out: Path
    m: Optional[int] = Field(default=None, ge=1, description="None means the m used at fit time")
    mode: Literal["auto", "exact", "sample"] = "auto"
    draws: Optional[Path] = None
    L: int = Field(default=300, ge=1)
    seed: int = 0
    draws_out: Optional[Path] = None
    level: float = Field(default=0.95, gt=0.0, lt=1.0)
    project: Optional[Literal["sinusoidal"]] = None
    intercept: bool = True
