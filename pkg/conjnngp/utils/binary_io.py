"""Binary container for draws, factors and posteriors.

Layout (all integers little-endian):

    b"CNNGPBIN"                 8-byte magic
    uint16                      format version
    uint32                      header length in bytes
    header                      UTF-8 JSON: {"kind", "meta", "arrays": [{name, dtype, shape}, ...]}
    array payloads              in header order, little-endian C-contiguous bytes
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from conjnngp.exceptions import SchemaError
from conjnngp.utils.json_safe import clean_json_values

MAGIC = b"CNNGPBIN"
VERSION = 1
KINDS = ("posterior_draws", "predictive_draws", "nngp_factor", "posterior")
_PREFIX = struct.Struct("<8sHI")


def write_container(path: str | Path, kind: str, arrays: dict[str, np.ndarray],
                    meta: dict[str, Any] | None = None) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown container kind '{kind}'")
    prepared = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        prepared.append((name, a))
    header = {
        "kind": kind,
        "meta": clean_json_values(meta or {}),
        "arrays": [{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)} for n, a in prepared],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(raw)))
        fh.write(raw)
        for _, a in prepared:
            fh.write(a.tobytes(order="C"))


def read_container(path: str | Path, kind: str | None = None) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Returns (meta, arrays). Raises SchemaError on a bad magic, version or kind."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise SchemaError(f"{path}: truncated binary container")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise SchemaError(f"{path}: not a conj-nngp binary file (bad magic)")
    if version != VERSION:
        raise SchemaError(f"{path}: unsupported format version {version}")
    start = _PREFIX.size
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    if kind is not None and header.get("kind") != kind:
        raise SchemaError(f"{path}: expected kind '{kind}', found '{header.get('kind')}'")

    offset = start + hlen
    arrays: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * dt.itemsize
        if offset + nbytes > len(data):
            raise SchemaError(f"{path}: array '{spec['name']}' runs past end of file")
        arrays[spec["name"]] = np.frombuffer(data, dtype=dt, count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    return header["meta"], arrays
