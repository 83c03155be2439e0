"""Locations, orderings and nearest-neighbor graphs.

Args/Inputs:
- coords: (n, 2) planar coordinates, or (n, 2) lon/lat degrees for projection.

Provides:
- LocationSet / NeighborGraph containers (immutable after construction).
- project_sinusoidal: lon/lat -> planar, 1000-km units.
- order_locations: permute rows by a named strategy or a callable hook.
- build_training_neighbors: m nearest predecessors per location.
- build_prediction_neighbors: m nearest training sites per new location.

Neighbor lists are sorted by ascending distance, ties by ascending index.
The KD-tree only proposes candidates; membership and order are decided on
distances recomputed here, so the result equals an exhaustive scan exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Union

import numpy as np
from scipy.spatial import cKDTree

from conjnngp.exceptions import InvalidInputError

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
_QUERY_BLOCK = 10_000
# Relative margin between the m-th candidate and the tree's k-th distance.
_BOUNDARY_RTOL = 1e-9

Provenance = Literal["raw", "projected"]
GraphKind = Literal["training", "prediction"]
OrderingStrategy = Union[str, Callable[[np.ndarray], np.ndarray]]


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LocationSet:
    coords: np.ndarray
    order: np.ndarray
    id_map: np.ndarray
    provenance: Provenance = "raw"

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise InvalidInputError(f"coords must be (n, 2), got {coords.shape}")
        bad = np.flatnonzero(~np.isfinite(coords).all(axis=1))
        if bad.size:
            raise InvalidInputError("non-finite coordinate", index=int(bad[0]))
        n = coords.shape[0]
        order = np.asarray(self.order, dtype=np.int64)
        if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
            raise InvalidInputError("order must be a permutation of 0..n-1")
        id_map = np.asarray(self.id_map, dtype=np.int64)
        if id_map.shape != (n,):
            raise InvalidInputError("id_map must have one entry per location")
        object.__setattr__(self, "coords", _frozen(coords, float))
        object.__setattr__(self, "order", _frozen(order, np.int64))
        object.__setattr__(self, "id_map", _frozen(id_map, np.int64))

    @classmethod
    def from_coords(cls, coords, ids=None, provenance: Provenance = "raw") -> "LocationSet":
        coords = np.asarray(coords, dtype=float)
        n = coords.shape[0] if coords.ndim == 2 else 0
        ids = np.arange(n) if ids is None else np.asarray(ids)
        return cls(coords=coords, order=np.arange(n), id_map=ids, provenance=provenance)

    @property
    def n(self) -> int:
        return int(self.coords.shape[0])

    def subset(self, idx) -> "LocationSet":
        """Rows `idx` as a fresh raw-indexed set; original ids are kept."""
        idx = np.asarray(idx, dtype=np.int64)
        return LocationSet(
            coords=self.coords[idx],
            order=np.arange(idx.size),
            id_map=self.id_map[idx],
            provenance=self.provenance,
        )


@dataclass(frozen=True)
class NeighborGraph:
    """Parent sets Pa[i], padded into an (n, width) array with -1."""

    m: int
    kind: GraphKind
    neighbors: np.ndarray
    counts: np.ndarray
    distances: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "neighbors", _frozen(self.neighbors, np.int64))
        object.__setattr__(self, "counts", _frozen(self.counts, np.int64))
        object.__setattr__(self, "distances", _frozen(self.distances, float))

    @property
    def n(self) -> int:
        return int(self.neighbors.shape[0])

    def parents(self, i: int) -> np.ndarray:
        return self.neighbors[i, : self.counts[i]]

    def parent_distances(self, i: int) -> np.ndarray:
        return self.distances[i, : self.counts[i]]

    def nnz(self) -> int:
        return int(self.counts.sum())


# Projection

def great_circle_distance(lonlat_a, lonlat_b, radius_km: float = EARTH_RADIUS_KM) -> np.ndarray:
    """Haversine distance in km between paired rows of two lon/lat arrays."""
    a = np.radians(np.atleast_2d(np.asarray(lonlat_a, dtype=float)))
    b = np.radians(np.atleast_2d(np.asarray(lonlat_b, dtype=float)))
    dlon = b[:, 0] - a[:, 0]
    dlat = b[:, 1] - a[:, 1]
    h = np.sin(dlat / 2.0) ** 2 + np.cos(a[:, 1]) * np.cos(b[:, 1]) * np.sin(dlon / 2.0) ** 2
    return 2.0 * radius_km * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def project_sinusoidal(lonlat, radius_km: float = EARTH_RADIUS_KM, ids=None) -> LocationSet:
    """x = R*lon*cos(lat), y = R*lat with R in 1000-km units, angles in radians."""
    ll = np.asarray(lonlat, dtype=float)
    if ll.ndim != 2 or ll.shape[1] != 2:
        raise InvalidInputError(f"lonlat must be (n, 2), got {ll.shape}")
    if radius_km <= 0:
        raise InvalidInputError("radius_km must be positive")
    lon, lat = ll[:, 0], ll[:, 1]
    bad = np.flatnonzero(~(np.isfinite(lon) & np.isfinite(lat)) | (np.abs(lat) > 90.0) | (np.abs(lon) > 180.0))
    if bad.size:
        i = int(bad[0])
        raise InvalidInputError(f"coordinate out of range lon={lon[i]} lat={lat[i]}", index=i)

    r = radius_km / 1000.0
    lam, phi = np.radians(lon), np.radians(lat)
    xy = np.column_stack([r * lam * np.cos(phi), r * phi])
    return LocationSet.from_coords(xy, ids=ids, provenance="projected")


def projection_qq(lonlat, n_pairs: int = 4000, seed: int = 0,
                  radius_km: float = EARTH_RADIUS_KM) -> tuple[np.ndarray, np.ndarray]:
    """Sorted projected vs. great-circle distances (both 1000-km units) for
    random location pairs; points near the 45 degree line mean the planar
    distance is a usable stand-in over the domain."""
    from conjnngp.quant.rng import substream

    ll = np.asarray(lonlat, dtype=float)
    rng = substream(seed)
    i = rng.integers(0, ll.shape[0], size=n_pairs)
    j = rng.integers(0, ll.shape[0], size=n_pairs)
    xy = project_sinusoidal(ll, radius_km).coords
    planar = np.sqrt(((xy[i] - xy[j]) ** 2).sum(axis=1))
    sphere = great_circle_distance(ll[i], ll[j], radius_km) / 1000.0
    return np.sort(planar), np.sort(sphere)


# Ordering

def _order_coord(coords: np.ndarray) -> np.ndarray:
    return np.lexsort((coords[:, 1], coords[:, 0]))


def _order_y(coords: np.ndarray) -> np.ndarray:
    return np.lexsort((coords[:, 0], coords[:, 1]))


def _order_identity(coords: np.ndarray) -> np.ndarray:
    return np.arange(coords.shape[0])


ORDERINGS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "coord": _order_coord,
    "y": _order_y,
    "identity": _order_identity,
}


def order_locations(locs: LocationSet, strategy: OrderingStrategy = "coord") -> LocationSet:
    """Permute rows; `order` stays relative to the raw input so that
    raw_coords[order] == coords after any number of reorderings."""
    if locs.n < 1:
        raise InvalidInputError("cannot order an empty location set")
    if callable(strategy):
        fn = strategy
    else:
        try:
            fn = ORDERINGS[strategy]
        except KeyError:
            raise InvalidInputError(f"unknown ordering strategy '{strategy}'; known: {sorted(ORDERINGS)}")
    perm = np.asarray(fn(locs.coords), dtype=np.int64)
    if perm.shape != (locs.n,) or not np.array_equal(np.sort(perm), np.arange(locs.n)):
        raise InvalidInputError("ordering strategy did not return a permutation")
    return LocationSet(
        coords=locs.coords[perm],
        order=locs.order[perm],
        id_map=locs.id_map[perm],
        provenance=locs.provenance,
    )


# Neighbor search

def _exact_knn(ref: np.ndarray, tree: cKDTree, queries: np.ndarray, need: np.ndarray,
               limit: np.ndarray | None, width: int, workers: int) -> tuple[np.ndarray, np.ndarray]:
    """need[q] nearest rows of `ref` to queries[q], restricted to indices < limit[q].

    Candidates come from the tree; the window k doubles until the need[q]-th
    eligible candidate is strictly inside the tree's k-th distance (or every
    point was returned), which makes the (distance, index) order exact.
    """
    n_ref = ref.shape[0]
    nq = queries.shape[0]
    out_idx = np.full((nq, width), -1, dtype=np.int64)
    out_d = np.full((nq, width), np.nan)

    pending = np.flatnonzero(need > 0)
    k = min(n_ref, max(2 * width + 1, 4))
    while pending.size:
        complete = k >= n_ref
        still = []
        for start in range(0, pending.size, _QUERY_BLOCK):
            rows = pending[start:start + _QUERY_BLOCK]
            d_tree, idx = tree.query(queries[rows], k=k, workers=workers)
            d_tree = np.asarray(d_tree).reshape(rows.size, k)
            idx = np.asarray(idx, dtype=np.int64).reshape(rows.size, k)

            diff = ref[idx] - queries[rows][:, None, :]
            dd = np.sqrt((diff ** 2).sum(axis=-1))
            eligible = idx < n_ref
            if limit is not None:
                eligible &= idx < limit[rows][:, None]
            key_d = np.where(eligible, dd, np.inf)
            srt = np.lexsort((idx, key_d), axis=-1)
            s_idx = np.take_along_axis(idx, srt, axis=1)
            s_d = np.take_along_axis(key_d, srt, axis=1)

            r_need = need[rows]
            n_elig = eligible.sum(axis=1)
            dm = s_d[np.arange(rows.size), np.maximum(r_need - 1, 0)]
            inside = dm + _BOUNDARY_RTOL * np.maximum(1.0, dm) < d_tree[:, -1]
            ok = (n_elig >= r_need) & (complete | inside)

            for j in np.flatnonzero(ok):
                q, c = rows[j], r_need[j]
                out_idx[q, :c] = s_idx[j, :c]
                out_d[q, :c] = s_d[j, :c]
            still.append(rows[~ok])
        pending = np.concatenate(still) if still else pending[:0]
        if complete and pending.size:
            # Every point was a candidate; only an internal bug lands here.
            raise RuntimeError("exact neighbor search failed to resolve all queries")
        k = min(n_ref, 2 * k)
    return out_idx, out_d


def build_training_neighbors(locs: LocationSet, m: int, workers: int = 1) -> NeighborGraph:
    """Pa[i] = the min(i, m) nearest of locations 0..i-1 (0-based positions)."""
    if m < 1:
        raise InvalidInputError("neighbor budget m must be >= 1")
    n = locs.n
    if n < 2:
        raise InvalidInputError("need at least 2 locations for a training graph")
    width = min(m, n - 1)
    need = np.minimum(np.arange(n), width)
    tree = cKDTree(locs.coords)
    idx, dist = _exact_knn(locs.coords, tree, locs.coords, need, np.arange(n), width, workers)
    logger.debug("training_neighbors n=%d m=%d nnz=%d", n, m, int(need.sum()))
    return NeighborGraph(m=m, kind="training", neighbors=idx, counts=need, distances=dist)


def build_prediction_neighbors(train: LocationSet, pred: LocationSet, m: int,
                               workers: int = 1) -> NeighborGraph:
    """Pa[u] = the m nearest training locations of each prediction site."""
    if train.n == 0:
        raise InvalidInputError("training location set is empty")
    if m < 1 or m > train.n:
        raise InvalidInputError(f"need 1 <= m <= n_train ({train.n}), got m={m}")
    need = np.full(pred.n, m, dtype=np.int64)
    tree = cKDTree(train.coords)
    idx, dist = _exact_knn(train.coords, tree, pred.coords, need, None, m, workers)
    logger.debug("prediction_neighbors n_pred=%d n_train=%d m=%d", pred.n, train.n, m)
    return NeighborGraph(m=m, kind="prediction", neighbors=idx, counts=need, distances=dist)
