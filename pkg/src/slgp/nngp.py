"""Vecchia/NNGP factorization of a correlation operator.

The approximated matrix is Gamma~ with Gamma~^-1 = (I - A)^T F^-1 (I - A),
where row i of A holds the kriging weights of location i on its preceding
neighbors and F the conditional variances.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import NeighborGraph

# rows per vectorised block; fixed so results never depend on thread count
CHUNK_ROWS = 4096
MIN_CONDITIONAL_VARIANCE = 1e-12


class FactorizationError(np.linalg.LinAlgError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row


@dataclass(frozen=True)
class SparseFactor:
    """Neighbor weights ``a`` (n, m), their indices ``nbrs`` (-1 padded) and
    conditional variances ``f``."""

    nbrs: np.ndarray
    a: np.ndarray
    f: np.ndarray

    @property
    def n(self) -> int:
        return len(self.f)

    @property
    def m(self) -> int:
        return self.nbrs.shape[1]

    def residual(self, u: np.ndarray) -> np.ndarray:
        """(I - A) u for a vector or an (n, k) matrix."""
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.n:
            raise ValueError(f"length {u.shape[0]} does not match factor size {self.n}")
        out = u.copy()
        safe = np.where(self.nbrs < 0, 0, self.nbrs)
        for j in range(self.m):
            w = self.a[:, j]
            out -= w.reshape((-1,) + (1,) * (u.ndim - 1)) * u[safe[:, j]]
        return out

    def whiten(self, u: np.ndarray) -> np.ndarray:
        """F^-1/2 (I - A) u, so that qf(u, v) = whiten(u)^T whiten(v)."""
        r = self.residual(u)
        s = 1.0 / np.sqrt(self.f)
        return r * s.reshape((-1,) + (1,) * (r.ndim - 1))

    def precision(self) -> np.ndarray:
        """Dense (I - A)^T F^-1 (I - A); small n only."""
        IA = self.residual(np.eye(self.n))
        return IA.T @ (IA / self.f[:, None])

    def covariance(self) -> np.ndarray:
        """Dense Gamma~ = (I - A)^-1 F (I - A)^-T; small n only."""
        L = np.linalg.inv(self.residual(np.eye(self.n)))
        return (L * self.f) @ L.T


def identity_factor(n: int) -> SparseFactor:
    """Factor of the identity: independent errors, no neighbors."""
    return SparseFactor(np.empty((n, 0), dtype=np.int64), np.empty((n, 0)), np.ones(n))


def _factor_rows(op, nbrs, lo, hi, a_out, f_out):
    rows = np.arange(lo, hi)
    nb = nbrs[lo:hi]
    m = nb.shape[1]
    diag_only = m == 0
    if diag_only:
        G = op.gram(rows[:, None])
        f = G[:, 0, 0]
    else:
        pad = nb < 0
        full = np.concatenate([np.where(pad, rows[:, None], nb), rows[:, None]], axis=1)
        G = op.gram(full)
        C = G[:, :m, :m]
        c = G[:, :m, m].copy()
        cii = G[:, m, m]
        if pad.any():
            both = pad[:, :, None] | pad[:, None, :]
            C[both] = 0.0
            diag = np.arange(m)
            C[:, diag, diag] += pad
            c[pad] = 0.0
        try:
            np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            for k in range(len(rows)):
                try:
                    np.linalg.cholesky(C[k])
                except np.linalg.LinAlgError:
                    raise FactorizationError(
                        int(rows[k]),
                        "neighbor correlation block is not positive definite "
                        "(duplicate coordinates?)",
                    ) from None
        a = np.linalg.solve(C, c[..., None])[..., 0]
        f = cii - np.sum(c * a, axis=1)
        a_out[lo:hi] = a
    bad = np.flatnonzero(~(f > MIN_CONDITIONAL_VARIANCE))
    if bad.size:
        raise FactorizationError(
            int(rows[bad[0]]), f"conditional variance {f[bad[0]]:.3e} is not positive"
        )
    f_out[lo:hi] = f


def factorize(op, graph: NeighborGraph, threads: int = 1) -> SparseFactor:
    """Sparse (A, F) factorization of ``op`` over ``graph``'s neighbor sets.

    Row i solves C[N(i), N(i)] a = C[N(i), i] and sets
    f_i = C[i, i] - C[i, N(i)] a. Rows are independent and are processed in
    fixed-size vectorised blocks, optionally on several threads.
    """
    nbrs = np.asarray(graph.nbrs)
    n, m = nbrs.shape
    if op.n != n:
        raise ValueError(f"operator has {op.n} locations, graph has {n}")
    a = np.zeros((n, m))
    f = np.empty(n)
    spans = [(lo, min(n, lo + CHUNK_ROWS)) for lo in range(0, n, CHUNK_ROWS)]
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(lambda s: _factor_rows(op, nbrs, s[0], s[1], a, f), spans))
    else:
        for lo, hi in spans:
            _factor_rows(op, nbrs, lo, hi, a, f)
    return SparseFactor(nbrs, a, f)


def qf(u, v, factor: SparseFactor):
    """u^T Gamma~^-1 v in O(n m) flops; u, v may be vectors or (n, k) matrices."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[0] != factor.n or v.shape[0] != factor.n:
        raise ValueError(
            f"lengths {u.shape[0]} and {v.shape[0]} do not match factor size {factor.n}"
        )
    ru = factor.residual(u)
    rv = factor.residual(v)
    fv = rv / factor.f.reshape((-1,) + (1,) * (rv.ndim - 1))
    out = ru.T @ fv
    return float(out) if np.ndim(out) == 0 else out


def log_det(factor: SparseFactor) -> float:
    """log det Gamma~ = sum of log conditional variances."""
    return float(np.sum(np.log(factor.f)))
