"""Exponential correlation, marginal correlation M = R + alpha*I and the
knot-projected residual correlation Omega.

The operator classes expose blocks of an n x n correlation matrix over
index sets without ever materialising the full matrix. They are what the
sparse factorization and the kriging code consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .geometry import KnotSet, _as_coords, distances

DEFAULT_JITTER = 1e-8


@dataclass(frozen=True)
class CovarianceSpec:
    """Decay ``phi`` and noise-to-signal ratio ``alpha = tau2 / sigma2``."""

    phi: float
    alpha: float

    def __post_init__(self):
        if not self.phi > 0:
            raise ValueError(f"phi must be positive, got {self.phi}")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")

    def tau2(self, sigma2: float) -> float:
        return self.alpha * sigma2

    @property
    def effective_range(self) -> float:
        return -np.log(0.05) / self.phi


def correlation(d, phi: float):
    """Exponential correlation exp(-phi * d)."""
    return np.exp(-phi * np.asarray(d, dtype=float))


def corr_matrix(A, B, phi: float) -> np.ndarray:
    A = _as_coords(A)
    B = _as_coords(B)
    return correlation(distances(A[:, None, :], B[None, :, :]), phi)


class ResidualCorrelation:
    """Knot correlation R(S*) (with diagonal jitter) and its Cholesky factor.

    All projections onto the knot subspace go through ``loadings``: for
    locations S it returns H = R(S, S*) L^-T, so that J R(S*) J^T = H H^T
    and J = H L^-1.
    """

    def __init__(self, knots: KnotSet, phi: float, alpha: float, jitter: float = DEFAULT_JITTER):
        if not isinstance(knots, KnotSet):
            knots = KnotSet(knots)
        CovarianceSpec(phi, alpha)
        self.knots = knots
        self.phi = float(phi)
        self.alpha = float(alpha)
        self.jitter = float(jitter)
        R = corr_matrix(knots.knots, knots.knots, phi)
        self.R_star_raw = R
        self.R_star = R + self.jitter * np.eye(knots.r)
        try:
            self.R_star_chol = np.linalg.cholesky(self.R_star)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"knot correlation matrix (r={knots.r}, phi={phi}) is not positive definite"
            ) from exc

    @property
    def r(self) -> int:
        return self.knots.r

    def loadings(self, coords) -> np.ndarray:
        """H = R(S, S*) L^-T as an (n, r) array."""
        C = corr_matrix(coords, self.knots.knots, self.phi)
        return solve_triangular(self.R_star_chol, C.T, lower=True).T

    def J_from_loadings(self, H: np.ndarray) -> np.ndarray:
        return solve_triangular(self.R_star_chol.T, H.T, lower=False).T

    def R_star_inv(self) -> np.ndarray:
        Linv = solve_triangular(self.R_star_chol, np.eye(self.r), lower=True)
        return Linv.T @ Linv


def build_J(S, rc: ResidualCorrelation) -> np.ndarray:
    """GPP weights J = R(S, S*) R(S*)^-1, one row per location."""
    return rc.J_from_loadings(rc.loadings(S))


def residual_gamma(rc: ResidualCorrelation, s, t) -> float:
    """GPP residual correlation corr(s, t) - J(s) R(S*) J(t)^T (no nugget)."""
    s = np.asarray(s, dtype=float).reshape(1, 2)
    t = np.asarray(t, dtype=float).reshape(1, 2)
    hs = rc.loadings(s)[0]
    ht = rc.loadings(t)[0]
    return float(correlation(distances(s[0], t[0]), rc.phi)) - float(hs @ ht)


def omega_entry(rc: ResidualCorrelation, s, t) -> float:
    """Single entry of Omega = R + alpha*I - J R(S*) J^T.

    The nugget enters only when ``s`` and ``t`` are the same point.
    """
    val = residual_gamma(rc, s, t)
    if np.array_equal(np.ravel(s), np.ravel(t)):
        val += rc.alpha
    return val


class CorrelationOperator:
    """Block accessor over a fixed list of locations.

    Subclasses supply ``_gram_part``, ``_cross_part`` and ``_diag_part``
    (nugget excluded) plus the pieces for new, off-list points.
    """

    coords: np.ndarray
    alpha: float

    @property
    def n(self) -> int:
        return len(self.coords)

    def gram(self, idx: np.ndarray) -> np.ndarray:
        """Stacked blocks: idx of shape (k, t) gives (k, t, t)."""
        idx = np.asarray(idx)
        G = self._gram_part(idx)
        if self.alpha:
            G = G + self.alpha * (idx[..., :, None] == idx[..., None, :])
        return G

    def block(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows).reshape(-1)
        cols = np.asarray(cols).reshape(-1)
        B = self._cross_part(rows, cols)
        if self.alpha:
            B = B + self.alpha * (rows[:, None] == cols[None, :])
        return B

    def diag(self) -> np.ndarray:
        return self._diag_part() + self.alpha

    def cross_new(self, points, nbrs, H_new=None) -> np.ndarray:
        """Correlation between new points (q, 2) and list rows nbrs (q, t).

        New observations are distinct from listed ones, so no nugget enters.
        """
        raise NotImplementedError

    def var_new(self, points, H_new=None) -> np.ndarray:
        raise NotImplementedError

    def subset(self, idx) -> "CorrelationOperator":
        raise NotImplementedError


class MarginalOperator(CorrelationOperator):
    """M = R(S; phi) + alpha * I, the plain NNGP response-model target."""

    def __init__(self, coords, phi: float, alpha: float):
        CovarianceSpec(phi, alpha)
        self.coords = _as_coords(coords)
        self.phi = float(phi)
        self.alpha = float(alpha)

    def _gram_part(self, idx):
        P = self.coords[idx]
        return correlation(distances(P[..., :, None, :], P[..., None, :, :]), self.phi)

    def _cross_part(self, rows, cols):
        return corr_matrix(self.coords[rows], self.coords[cols], self.phi)

    def _diag_part(self):
        return np.ones(self.n)

    def cross_new(self, points, nbrs, H_new=None):
        points = _as_coords(points)
        return correlation(distances(self.coords[nbrs], points[:, None, :]), self.phi)

    def var_new(self, points, H_new=None):
        return np.ones(len(_as_coords(points))) + self.alpha

    def subset(self, idx):
        return MarginalOperator(self.coords[np.asarray(idx)], self.phi, self.alpha)


class OmegaOperator(CorrelationOperator):
    """Omega = M - J R(S*) J^T evaluated lazily from cached knot loadings."""

    def __init__(self, coords, rc: ResidualCorrelation, H: np.ndarray | None = None):
        self.coords = _as_coords(coords)
        self.rc = rc
        self.phi = rc.phi
        self.alpha = rc.alpha
        self.H = rc.loadings(self.coords) if H is None else H

    def _gram_part(self, idx):
        P = self.coords[idx]
        Hs = self.H[idx]
        C = correlation(distances(P[..., :, None, :], P[..., None, :, :]), self.phi)
        return C - Hs @ np.swapaxes(Hs, -1, -2)

    def _cross_part(self, rows, cols):
        C = corr_matrix(self.coords[rows], self.coords[cols], self.phi)
        return C - self.H[rows] @ self.H[cols].T

    def _diag_part(self):
        return 1.0 - np.sum(self.H * self.H, axis=1)

    def cross_new(self, points, nbrs, H_new=None):
        points = _as_coords(points)
        if H_new is None:
            H_new = self.rc.loadings(points)
        C = correlation(distances(self.coords[nbrs], points[:, None, :]), self.phi)
        return C - np.einsum("qtr,qr->qt", self.H[nbrs], H_new)

    def var_new(self, points, H_new=None):
        if H_new is None:
            H_new = self.rc.loadings(points)
        return 1.0 + self.alpha - np.sum(H_new * H_new, axis=1)

    def subset(self, idx):
        idx = np.asarray(idx)
        return OmegaOperator(self.coords[idx], self.rc, self.H[idx])


class DenseOperator(CorrelationOperator):
    """Wraps an explicit symmetric matrix; used for small problems and tests."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)
        self.coords = np.zeros((len(self.matrix), 2))
        self.alpha = 0.0

    def _gram_part(self, idx):
        return self.matrix[idx[..., :, None], idx[..., None, :]]

    def _cross_part(self, rows, cols):
        return self.matrix[np.ix_(rows, cols)]

    def _diag_part(self):
        return np.diag(self.matrix).copy()

    def subset(self, idx):
        idx = np.asarray(idx)
        return DenseOperator(self.matrix[np.ix_(idx, idx)])
