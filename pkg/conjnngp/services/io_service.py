"""CSV input/output with schema checks and provenance.

Input CSVs carry coordinates (x, y or lon, lat), covariates named cov_*,
a `response` column and optionally `id`, `split` (train/test) and `w_true`.
Every CSV written here starts with a single comment line

    # conj-nngp <command> version=<v> config_sha256=<hex>

and the resolved run configuration sits next to it as <output>.config.json.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
import pandas as pd

from conjnngp import __version__
from conjnngp.exceptions import SchemaError
from conjnngp.quant.geometry import LocationSet, project_sinusoidal
from conjnngp.utils.json_safe import clean_json_values

logger = logging.getLogger(__name__)

COV_PREFIX = "cov_"
_PROVENANCE = re.compile(r"^# conj-nngp (\S+) version=(\S+) config_sha256=([0-9a-f]{64})$")


@dataclass(frozen=True, eq=False)
class SpatialData:
    """Rows in file order; `locs` is unordered (order == arange)."""

    locs: LocationSet
    X: np.ndarray
    y: Optional[np.ndarray]
    covariates: tuple[str, ...]
    split: Optional[np.ndarray] = None
    w_true: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.locs.n

    def rows(self, mask: np.ndarray) -> "SpatialData":
        idx = np.flatnonzero(mask)
        return SpatialData(
            locs=self.locs.subset(idx),
            X=self.X[idx],
            y=None if self.y is None else self.y[idx],
            covariates=self.covariates,
            split=None if self.split is None else self.split[idx],
            w_true=None if self.w_true is None else self.w_true[idx],
        )

    def train(self) -> "SpatialData":
        if self.split is None:
            return self
        return self.rows(self.split == "train")

    def test(self) -> "SpatialData":
        if self.split is None:
            return self.rows(np.zeros(self.n, dtype=bool))
        return self.rows(self.split == "test")


def read_spatial_csv(path: str | Path, project: Optional[Literal["sinusoidal"]] = None,
                     intercept: bool = True, require_response: bool = True) -> SpatialData:
    try:
        df = pd.read_csv(path, comment="#", float_precision="round_trip")
    except FileNotFoundError:
        raise SchemaError(f"input file not found: {path}")
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: file is empty")

    coord_cols = ["lon", "lat"] if project == "sinusoidal" else ["x", "y"]
    missing = [c for c in coord_cols if c not in df.columns]
    if require_response and "response" not in df.columns:
        missing.append("response")
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}; found {list(df.columns)}")
    if len(df) == 0:
        raise SchemaError(f"{path}: no data rows")

    cov_cols = sorted((c for c in df.columns if c.startswith(COV_PREFIX)), key=_cov_sort_key)
    numeric = coord_cols + cov_cols + (["response"] if "response" in df.columns else [])
    for c in numeric:
        vals = pd.to_numeric(df[c], errors="coerce")
        bad = np.flatnonzero(~np.isfinite(vals.to_numpy(dtype=float)))
        if bad.size:
            raise SchemaError(f"{path}: column '{c}' has a missing or non-numeric value", index=int(bad[0]))
        df[c] = vals

    ids = np.arange(len(df))
    if "id" in df.columns:
        try:
            ids = df["id"].to_numpy(dtype=np.int64)
        except (ValueError, TypeError):
            raise SchemaError(f"{path}: column 'id' must hold integers")
    xy = df[coord_cols].to_numpy(dtype=float)
    locs = project_sinusoidal(xy, ids=ids) if project == "sinusoidal" else LocationSet.from_coords(xy, ids=ids)

    design = [np.ones(len(df))] if intercept else []
    design += [df[c].to_numpy(dtype=float) for c in cov_cols]
    X = np.column_stack(design) if design else np.zeros((len(df), 0))
    names = (("intercept",) if intercept else ()) + tuple(cov_cols)

    split = None
    if "split" in df.columns:
        split = df["split"].astype(str).str.strip().str.lower().to_numpy()
        bad = np.flatnonzero(~np.isin(split, ["train", "test"]))
        if bad.size:
            raise SchemaError(f"{path}: split must be train or test", index=int(bad[0]))

    y = df["response"].to_numpy(dtype=float) if "response" in df.columns else None
    w_true = df["w_true"].to_numpy(dtype=float) if "w_true" in df.columns else None
    logger.debug("read_spatial_csv path=%s n=%d p=%d", path, len(df), X.shape[1])
    return SpatialData(locs=locs, X=X, y=y, covariates=names, split=split, w_true=w_true)


def _cov_sort_key(name: str):
    tail = name[len(COV_PREFIX):]
    return (0, int(tail), "") if tail.isdigit() else (1, 0, tail)


def config_digest(config: dict[str, Any]) -> str:
    raw = json.dumps(clean_json_values(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


def sidecar_path(path: str | Path) -> Path:
    return Path(f"{path}.config.json")


def write_config_sidecar(path: str | Path, command: str, config: dict[str, Any]) -> str:
    """Write <path>.config.json and return the SHA-256 of the resolved config."""
    digest = config_digest(config)
    payload = {"command": command, "version": __version__, "config_sha256": digest,
               "config": clean_json_values(config)}
    sidecar_path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return digest


def read_config_sidecar(path: str | Path) -> Optional[dict[str, Any]]:
    sc = sidecar_path(path)
    if not sc.exists():
        return None
    return json.loads(sc.read_text(encoding="utf-8"))


def provenance_line(command: str, digest: str) -> str:
    return f"# conj-nngp {command} version={__version__} config_sha256={digest}"


def write_csv(df: pd.DataFrame, path: str | Path, command: str, config: dict[str, Any],
              notes: tuple[str, ...] = ()) -> str:
    """`notes` become extra comment lines after the provenance line."""
    digest = write_config_sidecar(path, command, config)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(provenance_line(command, digest) + "\n")
        for note in notes:
            fh.write(f"# {note}\n")
        df.to_csv(fh, index=False, float_format="%.17g", lineterminator="\n")
    logger.info("wrote path=%s rows=%d", path, len(df))
    return digest


def read_provenance(path: str | Path) -> Optional[dict[str, str]]:
    # binary containers have no provenance line; decode leniently and let the regex miss
    with open(path, encoding="utf-8", errors="replace") as fh:
        first = fh.readline(4096).rstrip("\n")
    m = _PROVENANCE.match(first)
    if not m:
        return None
    return {"command": m.group(1), "version": m.group(2), "config_sha256": m.group(3)}


def load_upstream_config(path: str | Path, command: str) -> Optional[dict[str, Any]]:
    """Resolved config of an upstream output written by `command`.

    None when the sidecar is absent or was written by another command. A
    sidecar whose digest disagrees with its own config or with the file's
    provenance line raises SchemaError: the two were not written together.
    """
    sc = read_config_sidecar(path)
    if sc is None or sc.get("command") != command:
        return None
    config = sc.get("config") or {}
    if sc.get("config_sha256") != config_digest(config):
        raise SchemaError(f"{sidecar_path(path).name}: config does not match its config_sha256")
    prov = read_provenance(path)
    if prov is not None and (prov["command"] != command or prov["config_sha256"] != sc["config_sha256"]):
        raise SchemaError(
            f"{Path(path).name}: provenance {prov['command']}/{prov['config_sha256'][:12]} "
            f"disagrees with sidecar {command}/{sc['config_sha256'][:12]}"
        )
    return config


def read_table(path: str | Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, comment="#", float_precision="round_trip")
    except FileNotFoundError:
        raise SchemaError(f"input file not found: {path}")
