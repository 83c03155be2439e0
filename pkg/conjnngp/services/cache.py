"""Thread-safe cache for NNGP factors and neighbor graphs.

A dict + timestamps with fnmatch wildcards for bulk invalidation, shared by
the CV grid workers. Latent factors depend on (fold, m, phi) only, so one
entry serves every delta2 on the grid. When a directory is configured,
training factors are also written to disk in the binary container format
and survive across runs.
"""

from __future__ import annotations

import fnmatch
import hashlib
import logging
import threading
import time
from pathlib import Path
from typing import Any, Callable, Optional

import scipy.sparse as sp

from conjnngp.config import settings
from conjnngp.quant.nngp_factor import NNGPFactor
from conjnngp.utils.binary_io import read_container, write_container

logger = logging.getLogger(__name__)


class FactorCache:
    def __init__(self, ttl_seconds: Optional[float] = None, directory: Optional[Path] = None):
        self._data: dict[str, Any] = {}
        self._timestamps: dict[str, float] = {}
        self._lock = threading.Lock()
        self._ttl = ttl_seconds
        self._dir = Path(directory) if directory else None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    @classmethod
    def from_settings(cls) -> "FactorCache":
        return cls(ttl_seconds=settings.factor_cache_ttl, directory=settings.factor_cache_dir)

    @staticmethod
    def build_key(kind: str, scope: str, **kwargs) -> str:
        """Deterministic key from (kind, scope, **kwargs), e.g. factor|<scope>|fold:2|m:10|phi:17.65."""
        parts = [kind, scope]
        for k, v in sorted(kwargs.items()):
            parts.append(f"{k}:{float(v)!r}" if isinstance(v, float) else f"{k}:{v}")
        return "|".join(parts)

    def _path(self, key: str) -> Optional[Path]:
        if self._dir is None:
            return None
        return self._dir / (hashlib.sha256(key.encode("utf-8")).hexdigest() + ".bin")

    def get(self, key: str) -> Optional[Any]:
        with self._lock:
            if key in self._data:
                ts = self._timestamps.get(key, 0)
                if self._ttl is None or time.time() - ts < self._ttl:
                    self.hits += 1
                    return self._data[key]
                self._data.pop(key, None)
                self._timestamps.pop(key, None)
        path = self._path(key)
        if path is not None and path.exists():
            value = _load_factor(path)
            self.set(key, value, persist=False)
            with self._lock:
                self.hits += 1
            return value
        with self._lock:
            self.misses += 1
        return None

    def set(self, key: str, value: Any, persist: bool = True) -> None:
        with self._lock:
            self._data[key] = value
            self._timestamps[key] = time.time()
        path = self._path(key)
        if persist and path is not None and isinstance(value, NNGPFactor):
            _save_factor(path, value, key)

    def get_or_build(self, key: str, builder: Callable[[], Any]) -> Any:
        value = self.get(key)
        if value is None:
            value = builder()
            self.set(key, value)
        return value

    def clear(self, pattern: Optional[str] = None) -> int:
        """Clear in-memory entries matching an fnmatch pattern, or everything.
        Returns number of removed entries."""
        with self._lock:
            if pattern is None:
                removed = len(self._data)
                self._data.clear()
                self._timestamps.clear()
                return removed

            keys = [k for k in self._data if fnmatch.fnmatch(k, pattern)]
            for k in keys:
                self._data.pop(k, None)
                self._timestamps.pop(k, None)
            return len(keys)

    def size(self) -> int:
        with self._lock:
            return len(self._data)


def _save_factor(path: Path, f: NNGPFactor, key: str) -> None:
    a = f.a.tocsr()
    write_container(
        path, "nngp_factor",
        {"indptr": a.indptr, "indices": a.indices, "data": a.data, "d": f.d},
        meta={"key": key, "target": f.target, "phi": f.phi, "delta2": f.delta2, "n": f.n},
    )
    logger.debug("factor_cache stored key=%s path=%s", key, path.name)


def _load_factor(path: Path) -> NNGPFactor:
    meta, arr = read_container(path, kind="nngp_factor")
    n = int(meta["n"])
    a = sp.csr_matrix((arr["data"], arr["indices"], arr["indptr"]), shape=(n, n))
    return NNGPFactor(a=a, d=arr["d"], target=meta["target"], phi=float(meta["phi"]),
                      delta2=float(meta["delta2"]))
