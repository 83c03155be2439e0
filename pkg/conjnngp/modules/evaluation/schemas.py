"""Run parameters and report shapes for the evaluate stage."""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, Field

from conjnngp.config import RunConfig

MSE_W_NOTE = "MSE(w) is a sum of squared errors over training sites, not a mean"
KL_NOTE = "KL-D is computed on the collapsed space: N(X beta, sigma2 M + tau2 I) vs the fitted NNGP analogue"


class EvaluateConfig(RunConfig):
    truth: Path
    draws: Path
    pred: Optional[Path] = None
    out: Path
    level: float = Field(default=0.95, gt=0.0, lt=1.0)
    kl: bool = True
    intercept: bool = True


class MetricRow(BaseModel):
    metric: str
    value: Optional[float] = None
    lo95: Optional[float] = None
    hi95: Optional[float] = None
    truth: Optional[float] = None


class MetricsReport(BaseModel):
    rows: List[MetricRow]
    notes: List[str] = [MSE_W_NOTE, KL_NOTE]

    def value(self, metric: str) -> Optional[float]:
        for r in self.rows:
            if r.metric == metric:
                return r.value
        raise KeyError(metric)
