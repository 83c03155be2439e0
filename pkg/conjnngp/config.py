"""Centralized typed configuration loaded from environment variables.

A single `settings` instance is the source of truth for process-level knobs
(log level, thread count, dense-path caps, CG tolerance). Eager validation on
import means a bad `CONJNNGP_*` variable fails before any computation starts.

Per-run parameters (paths, m, grid, seeds) live in `RunConfig` subclasses,
resolved by the CLI with precedence flags > config file > defaults.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from conjnngp.exceptions import InvalidInputError


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="CONJNNGP_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Operational
    log_level: str = Field(default="INFO", pattern=r"^(DEBUG|INFO|WARNING|ERROR|CRITICAL)$")
    threads: int = Field(default=1, ge=1, le=512)

    # Dense oracles (simulation, KL-D) are O(n^3); keep them honest.
    dense_cap: int = Field(default=5000, ge=1)
    # Exact multivariate-t prediction needs one CG solve per site.
    exact_predict_cap: int = Field(default=500, ge=1)
    predict_block: int = Field(default=10_000, ge=1)

    cg_rel_tol: float = Field(default=1e-8, gt=0.0, lt=1.0)
    factor_cache_dir: Optional[Path] = Field(
        default=None,
        description="Directory for the on-disk NNGP factor cache; in-memory only when unset",
    )
    factor_cache_ttl: Optional[float] = Field(
        default=None, gt=0.0,
        description="Seconds an in-memory cache entry stays valid; no expiry when unset",
    )


settings = Settings()


# Per-run configuration
#
# Config files are TOML with dotted keys, e.g.
#
#   kernel.family = "exponential"
#   kernel.phi = 17.65
#   noise.delta2 = 0.0876
#   grid.phi = [2.0, 200.0, 5]
#   fit.m = 10
#
# Each key maps onto one RunConfig field; a subcommand picks the fields it
# declares and ignores the rest, so one file can drive a whole pipeline.

FILE_KEYS: dict[str, str] = {
    "kernel.family": "family",
    "kernel.phi": "phi",
    "noise.delta2": "delta2",
    "grid.phi": "grid_phi",
    "grid.delta2": "grid_delta2",
    "grid.phis": "grid_phis",
    "grid.delta2s": "grid_delta2s",
    "fit.m": "m",
    "fit.L": "L",
    "fit.seed": "seed",
    "fit.ordering": "ordering",
    "cv.K": "K",
    "cv.refine": "refine",
    "cv.shrink": "shrink",
    "cv.model": "model",
    "prior.a_sigma": "a_sigma",
    "prior.b_sigma": "b_sigma",
    "solver.rel_tol": "rel_tol",
    "solver.max_iter": "max_iter",
    "solver.preconditioner": "preconditioner",
}


def _flatten(tree: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a TOML run file into RunConfig field names."""
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except FileNotFoundError:
        raise InvalidInputError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise InvalidInputError(f"config file {path} is not valid TOML: {exc}")
    flat = _flatten(tree)
    unknown = sorted(set(flat) - set(FILE_KEYS))
    if unknown:
        raise InvalidInputError(f"unknown config key(s) {unknown}; known: {sorted(FILE_KEYS)}")
    return {FILE_KEYS[k]: v for k, v in flat.items()}


class RunConfig(BaseModel):
    """Base for per-subcommand parameter sets."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    threads: int = Field(default_factory=lambda: settings.threads, ge=1)

    @classmethod
    def resolve(cls, flags: dict[str, Any], file_values: dict[str, Any] | None = None):
        """flags > config file > defaults. Flags left at None do not override."""
        fields = cls.model_fields
        merged = {k: v for k, v in (file_values or {}).items() if k in fields}
        merged.update({k: v for k, v in flags.items() if k in fields and v is not None})
        return cls(**merged)

    def resolved(self) -> dict[str, Any]:
        """Serializable config for sidecars and provenance hashes. Thread count
        never changes results and is left out so hashes match across machines."""
        return self.model_dump(mode="json", exclude={"threads"})
