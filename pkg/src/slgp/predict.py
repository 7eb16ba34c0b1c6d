"""Kriging from a fitted conjugate model by m-nearest-neighbor conditioning."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import _as_coords, query_neighbors

CHUNK_POINTS = 2048


class PredictionError(np.linalg.LinAlgError):
    def __init__(self, index: int, reason: str):
        super().__init__(f"location {index}: {reason}")
        self.index = index


@dataclass(frozen=True)
class PredictiveDistribution:
    """Predictive mean and variance; variance = b* v0 / (a* - 1).

    Fields are scalars for a single location and arrays for a batch.
    """

    mean: np.ndarray
    variance: np.ndarray
    v0: np.ndarray

    def __len__(self):
        return len(np.atleast_1d(self.mean))

    def __getitem__(self, i):
        return PredictiveDistribution(self.mean[i], self.variance[i], self.v0[i])


def krige(op, y, X_star, g, V, a_star, b_star, points, xs, nbrs, H_new=None, offset=0):
    """Predictive mean and variance at new points given neighbor rows.

    With w the kriging weights of a new point on its neighbors N and
    z = Omega(s, N):
    mean = x*(s).g + w.(y_N - X*_N g) and
    v0 = x*(s)^T V x*(s) + Omega(s, s) - w.z,
    where Omega(s, s) = 1 + alpha for the NNGP model.
    """
    q = len(points)
    if q == 0:
        e = np.empty(0)
        return e, e.copy(), e.copy()
    G = op.gram(nbrs)
    z = op.cross_new(points, nbrs, H_new)
    try:
        w = np.linalg.solve(G, z[..., None])[..., 0]
    except np.linalg.LinAlgError:
        for k in range(q):
            try:
                np.linalg.cholesky(G[k])
            except np.linalg.LinAlgError:
                raise PredictionError(offset + k, "singular neighbor block") from None
        raise
    Xn = X_star[nbrs]
    mean = xs @ g + np.sum(w * (y[nbrs] - Xn @ g), axis=1)
    v0 = np.einsum("qk,kl,ql->q", xs, V, xs) + op.var_new(points, H_new) - np.sum(w * z, axis=1)
    return mean, b_star * v0 / (a_star - 1.0), v0


def _as_covariates(X_new, q, p):
    if X_new is None:
        if p != 1:
            raise ValueError(f"model has {p} covariates; supply X for new locations")
        return np.ones((q, 1))
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim != 2:
        X_new = X_new.reshape(q, -1) if q else np.empty((0, p))
    if X_new.shape[0] != q:
        raise ValueError(f"{q} locations but {X_new.shape[0]} covariate rows")
    if X_new.shape[1] != p:
        raise ValueError(f"model has {p} covariates, got {X_new.shape[1]}")
    return X_new


def predict_batch(model, locations, X_new=None, threads: int = 1) -> PredictiveDistribution:
    """Predictive distributions at each row of ``locations``."""
    loc = np.asarray(locations, dtype=float)
    pts = np.empty((0, 2)) if loc.size == 0 else _as_coords(loc)
    q = len(pts)
    X_new = _as_covariates(X_new, q, model.design.p)
    nbrs = query_neighbors(pts, model.coords, model.m, tree=model.tree)
    mean = np.empty(q)
    var = np.empty(q)
    v0 = np.empty(q)
    post = model.fit

    def run(lo):
        hi = min(q, lo + CHUNK_POINTS)
        p = pts[lo:hi]
        H_new = None if model.rc is None else model.rc.loadings(p)
        xs = X_new[lo:hi] if model.rc is None else np.hstack([X_new[lo:hi], model.rc.J_from_loadings(H_new)])
        mean[lo:hi], var[lo:hi], v0[lo:hi] = krige(
            model.op, model.y, model.design.X_star, post.g, post.V, post.a_star,
            post.b_star, p, xs, nbrs[lo:hi], H_new, offset=lo,
        )

    starts = range(0, q, CHUNK_POINTS)
    if threads > 1 and q > CHUNK_POINTS:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(run, starts))
    else:
        for lo in starts:
            run(lo)
    return PredictiveDistribution(mean, var, v0)


def predict_one(model, s, x=None) -> PredictiveDistribution:
    d = predict_batch(model, np.asarray(s, dtype=float).reshape(1, 2), None if x is None else np.reshape(x, (1, -1)))
    return PredictiveDistribution(float(d.mean[0]), float(d.variance[0]), float(d.v0[0]))
