"""Correlation kernels, variance parameters and (phi, delta2) candidate grids.

Kernels are evaluated on the correlation scale M (C = sigma2 * M), so every
NNGP factor built from them is sigma2-free.

Provides:
- KernelSpec / VarianceSpec / HyperGrid (validated, immutable).
- corr: exp(-phi * dist).
- max_distance, default_grid, grid_from_bounds, refine_grid.
"""

from __future__ import annotations

import logging
from typing import Callable, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial.distance import cdist

from conjnngp.exceptions import InvalidInputError
from conjnngp.quant.geometry import LocationSet

logger = logging.getLogger(__name__)

PHI_FACTORS = (3.0, 300.0)
DELTA2_BOUNDS = (1e-3, 1e3)
EXACT_MAXDIST_N = 10_000
_MAXDIST_BLOCK = 1000


class KernelSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: Literal["exponential"] = "exponential"
    phi: float = Field(gt=0.0, allow_inf_nan=False, description="spatial decay, 1/distance")


class VarianceSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma2: float = Field(gt=0.0, description="partial sill")
    delta2: float = Field(gt=0.0, description="noise-to-sill ratio tau2/sigma2")

    @property
    def tau2(self) -> float:
        return self.delta2 * self.sigma2

    @classmethod
    def from_tau2(cls, sigma2: float, tau2: float) -> "VarianceSpec":
        return cls(sigma2=sigma2, delta2=tau2 / sigma2)


class HyperGrid(BaseModel):
    """Candidate (phi, delta2) values. The *_bounds fields remember the
    coarse-stage range so refinement never wanders outside it."""

    model_config = ConfigDict(frozen=True)

    phis: Tuple[float, ...]
    delta2s: Tuple[float, ...]
    phi_bounds: Tuple[float, float]
    delta2_bounds: Tuple[float, float]
    stage: int = 0

    @field_validator("phis", "delta2s")
    @classmethod
    def _positive_ascending(cls, v):
        if len(v) == 0:
            raise ValueError("grid axis must be nonempty")
        arr = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("grid values must be positive and finite")
        if np.any(np.diff(arr) <= 0):
            raise ValueError("grid values must be strictly ascending")
        return tuple(float(x) for x in arr)

    @model_validator(mode="after")
    def _inside_bounds(self):
        for vals, (lo, hi) in ((self.phis, self.phi_bounds), (self.delta2s, self.delta2_bounds)):
            if not (0 < lo <= hi):
                raise ValueError("bounds must satisfy 0 < lo <= hi")
            if vals[0] < lo * (1 - 1e-12) or vals[-1] > hi * (1 + 1e-12):
                raise ValueError("grid values must lie within their bounds")
        return self

    def cells(self) -> list[tuple[float, float]]:
        return [(p, d) for p in self.phis for d in self.delta2s]

    def index_of(self, phi: float, delta2: float) -> tuple[int, int]:
        return int(np.argmin(np.abs(np.log(self.phis) - np.log(phi)))), \
            int(np.argmin(np.abs(np.log(self.delta2s) - np.log(delta2))))


def _exponential(phi: float, dist: np.ndarray) -> np.ndarray:
    return np.exp(-phi * dist)


KERNELS: dict[str, Callable[[float, np.ndarray], np.ndarray]] = {
    "exponential": _exponential,
}


def corr(spec: KernelSpec, dist):
    """Correlation at distance(s) `dist`; scalar in, float out."""
    d = np.asarray(dist, dtype=float)
    if np.any(d < 0) or np.any(np.isnan(d)):
        raise InvalidInputError("distance must be nonnegative")
    out = KERNELS[spec.family](spec.phi, d)
    return float(out) if out.ndim == 0 else out


def max_distance(locs: LocationSet) -> float:
    """Exact maximum pairwise distance for n <= 10^4 (blocked cdist);
    above that, the bounding-box diagonal, which is an upper bound."""
    xy = locs.coords
    n = xy.shape[0]
    if n < 2:
        raise InvalidInputError("need at least 2 locations for maxdist")
    if n <= EXACT_MAXDIST_N:
        best = 0.0
        for start in range(0, n, _MAXDIST_BLOCK):
            best = max(best, float(cdist(xy[start:start + _MAXDIST_BLOCK], xy).max()))
        return best
    span = xy.max(axis=0) - xy.min(axis=0)
    logger.info("maxdist n=%d uses bounding-box diagonal upper bound", n)
    return float(np.hypot(span[0], span[1]))


def _axis(lo: float, hi: float, levels: int) -> tuple[float, ...]:
    if levels < 1:
        raise InvalidInputError("grid levels must be >= 1")
    if levels == 1:
        return (float(np.sqrt(lo * hi)),)
    return tuple(float(v) for v in np.geomspace(lo, hi, levels))


def grid_from_bounds(phi: tuple[float, float, int], delta2: tuple[float, float, int]) -> HyperGrid:
    """Log-spaced grid from (lo, hi, levels) per axis, the config-file form."""
    (plo, phi_hi, pn), (dlo, dhi, dn) = phi, delta2
    if not (0 < plo <= phi_hi) or not (0 < dlo <= dhi):
        raise InvalidInputError("grid bounds must satisfy 0 < lo <= hi")
    return HyperGrid(
        phis=_axis(plo, phi_hi, int(pn)),
        delta2s=_axis(dlo, dhi, int(dn)),
        phi_bounds=(float(plo), float(phi_hi)),
        delta2_bounds=(float(dlo), float(dhi)),
    )


def default_grid(locs: LocationSet, levels_phi: int = 5, levels_delta: int = 5) -> HyperGrid:
    """phi in [3, 300] / maxdist (correlation below 0.05 at maxdist at the
    low end), delta2 in [0.001, 1000]."""
    md = max_distance(locs)
    if md <= 0:
        raise InvalidInputError("all locations coincide (maxdist = 0)")
    lo, hi = PHI_FACTORS[0] / md, PHI_FACTORS[1] / md
    return grid_from_bounds((lo, hi, levels_phi), (*DELTA2_BOUNDS, levels_delta))


def _refine_axis(vals, bounds, best: float, shrink: float, levels: int) -> tuple[float, ...]:
    lo_b, hi_b = np.log(bounds[0]), np.log(bounds[1])
    width = shrink * (np.log(vals[-1]) - np.log(vals[0]))
    if width <= 0:
        return (float(np.clip(best, bounds[0], bounds[1])),)
    lo = np.log(best) - width / 2.0
    hi = lo + width
    # shift, not truncate: the window keeps its width inside the bounds
    if lo < lo_b:
        lo, hi = lo_b, lo_b + width
    if hi > hi_b:
        lo, hi = hi_b - width, hi_b
    lo = max(lo, lo_b)
    return _axis(float(np.exp(lo)), float(np.exp(hi)), levels)


def refine_grid(grid: HyperGrid, best: tuple[float, float], shrink: float = 0.5,
                levels: int | None = None) -> HyperGrid:
    if not (0 < shrink <= 1):
        raise InvalidInputError("shrink must be in (0, 1]")
    phi, delta2 = best
    if phi <= 0 or delta2 <= 0:
        raise InvalidInputError("best cell must be positive")
    lp = levels or len(grid.phis)
    ld = levels or len(grid.delta2s)
    return HyperGrid(
        phis=_refine_axis(grid.phis, grid.phi_bounds, phi, shrink, lp),
        delta2s=_refine_axis(grid.delta2s, grid.delta2_bounds, delta2, shrink, ld),
        phi_bounds=grid.phi_bounds,
        delta2_bounds=grid.delta2_bounds,
        stage=grid.stage + 1,
    )
