"""Locations, orderings, nearest-neighbor sets and knot grids."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

ORDERINGS = ("first-coordinate", "coordinate-sum")

# candidate count above which unresolved rows fall back to a direct scan
_KNN_MAX_K = 512


class DuplicateLocationError(ValueError):
    """Raised when two rows share identical coordinates."""


def _as_coords(coords) -> np.ndarray:
    c = np.asarray(coords, dtype=float)
    if c.ndim == 1 and c.size == 2:
        c = c.reshape(1, 2)
    if c.ndim != 2 or c.shape[1] != 2:
        raise ValueError(f"coordinates must be an (n, 2) array, got shape {c.shape}")
    return c


def distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances between broadcastable stacks of 2-D points."""
    diff = a - b
    return np.sqrt(np.sum(diff * diff, axis=-1))


def check_unique(coords: np.ndarray) -> None:
    c = _as_coords(coords)
    if len(c) < 2:
        return
    _, first, counts = np.unique(c, axis=0, return_index=True, return_counts=True)
    if np.any(counts > 1):
        dup = np.sort(first[counts > 1])[0]
        rows = np.flatnonzero(np.all(c == c[dup], axis=1))
        raise DuplicateLocationError(
            f"duplicate coordinates {tuple(c[dup])} at rows {rows.tolist()}"
        )


@dataclass(frozen=True)
class SpatialDataset:
    """Point-referenced data: coordinates, outcomes and design matrix.

    ``X`` defaults to a single intercept column.
    """

    coords: np.ndarray
    y: np.ndarray
    X: np.ndarray = None

    def __post_init__(self):
        coords = _as_coords(self.coords)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = len(coords)
        X = np.ones((n, 1)) if self.X is None else np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if n < 1:
            raise ValueError("dataset needs at least one location")
        if len(y) != n or X.shape[0] != n:
            raise ValueError(
                f"row counts differ: coords {n}, y {len(y)}, X {X.shape[0]}"
            )
        if X.shape[1] < 1:
            raise ValueError("design matrix needs at least one column")
        check_unique(coords)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "SpatialDataset":
        idx = np.asarray(idx)
        return SpatialDataset(self.coords[idx], self.y[idx], self.X[idx])


@dataclass(frozen=True)
class KnotSet:
    knots: np.ndarray

    def __post_init__(self):
        k = _as_coords(self.knots)
        if len(k) < 1:
            raise ValueError("need at least one knot")
        check_unique(k)
        object.__setattr__(self, "knots", k)

    @property
    def r(self) -> int:
        return len(self.knots)


@dataclass(frozen=True)
class NeighborGraph:
    """Preceding-neighbor sets over an ordered set of locations.

    ``nbrs`` is an (n, m) index array sorted nearest first and padded with
    -1 where a location has fewer than ``m`` predecessors.
    """

    nbrs: np.ndarray
    order: np.ndarray = field(default=None)

    @property
    def n(self) -> int:
        return self.nbrs.shape[0]

    @property
    def m(self) -> int:
        return self.nbrs.shape[1]

    @property
    def sets(self) -> list[list[int]]:
        return [[int(j) for j in row if j >= 0] for row in self.nbrs]


def build_ordering(coords, strategy: str = "first-coordinate") -> np.ndarray:
    """Permutation sorting locations by a coordinate key, ties by index."""
    c = _as_coords(coords)
    if strategy == "first-coordinate":
        key = c[:, 0]
    elif strategy == "coordinate-sum":
        key = c[:, 0] + c[:, 1]
    else:
        raise ValueError(f"unknown ordering {strategy!r}; choose from {ORDERINGS}")
    return np.argsort(key, kind="stable")


def _select(cand, dist, m):
    """Sort candidate rows by (distance, index) and keep the first m."""
    order = np.lexsort((cand, dist), axis=-1)
    cand = np.take_along_axis(cand, order, axis=-1)[:, :m]
    dist = np.take_along_axis(dist, order, axis=-1)[:, :m]
    return cand, dist


def _knn(ref, points, m, tree=None, before=None):
    """m nearest reference rows for each point, ties broken by lower index.

    When ``before`` is given, point i may only use reference rows with
    index < before[i]. Unused slots are -1. Results equal an exhaustive
    scan; the tree only proposes candidates.
    """
    q = len(points)
    n = len(ref)
    out = np.full((q, m), -1, dtype=np.int64)
    if q == 0 or m == 0 or n == 0:
        return out
    if tree is None:
        tree = cKDTree(ref)
    limit = np.full(q, n) if before is None else np.asarray(before)
    need = np.minimum(limit, m)
    pending = np.flatnonzero(need > 0)
    k = min(n, 2 * m + 1 if before is not None else m + 1)
    while pending.size:
        if k > _KNN_MAX_K and k < n:
            for i in pending:
                cand = np.arange(limit[i])
                d = distances(ref[cand], points[i])
                sel = np.lexsort((cand, d))[: need[i]]
                out[i, : need[i]] = cand[sel]
            break
        d_tree, cand = tree.query(points[pending], k=k)
        cand = cand.reshape(len(pending), k)
        kmax = np.asarray(d_tree).reshape(len(pending), k)[:, -1]
        d = distances(ref[np.minimum(cand, n - 1)], points[pending][:, None, :])
        valid = cand < limit[pending][:, None]
        d = np.where(valid, d, np.inf)
        cand = np.where(valid, cand, n)
        cand_s, d_s = _select(cand, d, m)
        nneed = need[pending]
        last = d_s[np.arange(len(pending)), nneed - 1]
        if k >= n:
            ok = np.ones(len(pending), dtype=bool)
        else:
            ok = last < kmax * (1.0 - 1e-12)
        rows = pending[ok]
        cand_ok = cand_s[ok]
        cand_ok[cand_ok >= n] = -1
        out[rows, : cand_ok.shape[1]] = cand_ok
        pending = pending[~ok]
        k = min(n, 2 * k)
    return out


def neighbor_sets(ordered_coords, m: int) -> NeighborGraph:
    """Nearest preceding neighbors of every location in an ordered set.

    Row i of the result holds the min(i, m) nearest locations among rows
    0..i-1, nearest first, ties broken by lower index.
    """
    c = _as_coords(ordered_coords)
    if m < 0:
        raise ValueError("m must be nonnegative")
    check_unique(c)
    n = len(c)
    nbrs = _knn(c, c, m, before=np.arange(n))
    return NeighborGraph(nbrs)


def query_neighbors(points, ref_coords, m: int, tree=None) -> np.ndarray:
    """Batch form of :func:`predict_neighbors`; returns a (q, min(n, m)) array."""
    ref = _as_coords(ref_coords)
    pts = _as_coords(points) if len(np.asarray(points)) else np.empty((0, 2))
    if m < 1:
        raise ValueError("m must be at least 1")
    if len(ref) == 0:
        raise ValueError("reference set is empty")
    return _knn(ref, pts, min(m, len(ref)), tree=tree)


def predict_neighbors(s, ref_coords, m: int) -> np.ndarray:
    """Indices of the min(n, m) reference locations nearest to ``s``."""
    s = np.asarray(s, dtype=float).reshape(1, 2)
    return query_neighbors(s, ref_coords, m)[0]


def knot_grid(bbox, r_target: int) -> KnotSet:
    """Cell-centred g x g knot grid over ``bbox`` with g = round(sqrt(r_target))."""
    min_x, min_y, max_x, max_y = map(float, bbox)
    if not (max_x > min_x and max_y > min_y):
        raise ValueError(f"degenerate bounding box {bbox}")
    if r_target < 1:
        raise ValueError("r_target must be at least 1")
    g = max(1, int(round(np.sqrt(r_target))))
    gx = min_x + (np.arange(g) + 0.5) * ((max_x - min_x) / g)
    gy = min_y + (np.arange(g) + 0.5) * ((max_y - min_y) / g)
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    return KnotSet(np.column_stack([xx.ravel(), yy.ravel()]))


def bounding_box(coords) -> tuple[float, float, float, float]:
    c = _as_coords(coords)
    return (c[:, 0].min(), c[:, 1].min(), c[:, 0].max(), c[:, 1].max())
