"""Synthetic data from the dense GP-plus-nugget model and dense reference
computations of the conjugate posterior and kriging predictor.

The dense routines deliberately avoid the neighbor/factor machinery and
use scipy's dense solvers, so they serve as an independent check of the
sparse pipeline for n up to a few thousand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist

from .conjugate import ConjugateFit, PriorSpec
from .geometry import KnotSet, SpatialDataset
from .predict import PredictiveDistribution

MAX_SIMULATE_N = 20_000
MAX_DENSE_N = 2_000


@dataclass(frozen=True)
class GeneratorSpec:
    n: int
    sigma2: float = 1.0
    phi: float = 12.0
    tau2: float = 0.5
    beta: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.sigma2 < 0 or self.tau2 < 0:
            raise ValueError("sigma2 and tau2 must be nonnegative")
        if self.sigma2 == 0 and self.tau2 == 0:
            raise ValueError("sigma2 and tau2 cannot both be zero")
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")


def simulate_gp(spec: GeneratorSpec, coords=None) -> SpatialDataset:
    """Draw y = X beta + L zeta + tau * eps with L L^T = sigma2 R(S; phi).

    Without coordinates, locations are uniform on the unit square. Without
    ``beta`` the mean is zero and X is a single intercept column; otherwise
    X holds an intercept followed by standard-normal covariates.
    """
    if spec.n > MAX_SIMULATE_N:
        raise ValueError(
            f"n={spec.n} exceeds the dense simulation bound {MAX_SIMULATE_N}; use a desk-scale size"
        )
    rng = np.random.default_rng(spec.seed)
    if coords is None:
        coords = rng.uniform(size=(spec.n, 2))
    else:
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (spec.n, 2):
            raise ValueError(f"coords shape {coords.shape} does not match n={spec.n}")
    beta = np.zeros(1) if spec.beta is None else np.asarray(spec.beta, dtype=float)
    X = np.ones((spec.n, len(beta)))
    if len(beta) > 1:
        X[:, 1:] = rng.standard_normal((spec.n, len(beta) - 1))
    y = X @ beta
    if spec.sigma2 > 0:
        C = spec.sigma2 * np.exp(-spec.phi * cdist(coords, coords))
        L = sla.cholesky(C, lower=True, check_finite=False)
        y = y + L @ rng.standard_normal(spec.n)
    y = y + np.sqrt(spec.tau2) * rng.standard_normal(spec.n)
    return SpatialDataset(coords, y, X)


def _dense_pieces(coords, alpha, phi, knots, jitter):
    """Dense Omega (or M) and J over the training set."""
    n = len(coords)
    M = np.exp(-phi * cdist(coords, coords)) + alpha * np.eye(n)
    if knots is None:
        return M, None, None
    kc = knots.knots if isinstance(knots, KnotSet) else np.asarray(knots, dtype=float)
    Rs = np.exp(-phi * cdist(kc, kc)) + jitter * np.eye(len(kc))
    Rsk = np.exp(-phi * cdist(coords, kc))
    J = sla.solve(Rs, Rsk.T, assume_a="pos").T
    return M - J @ Rs @ J.T, J, Rs


def _check_size(n):
    if n > MAX_DENSE_N:
        raise ValueError(f"dense reference limited to n <= {MAX_DENSE_N}, got {n}")


def dense_posterior(ds: SpatialDataset, knots, alpha: float, phi: float, prior: PriorSpec | None = None, jitter: float = 1e-8) -> ConjugateFit:
    """Exact conjugate posterior using a dense covariance (no neighbor truncation)."""
    _check_size(ds.n)
    prior = PriorSpec.default(ds.p) if prior is None else prior
    Om, J, Rs = _dense_pieces(ds.coords, alpha, phi, knots, jitter)
    Xs = ds.X if J is None else np.hstack([ds.X, J])
    mu = prior.mu_beta if J is None else np.concatenate([prior.mu_beta, np.zeros(J.shape[1])])
    Vstar = prior.V_beta if J is None else sla.block_diag(prior.V_beta, Rs)
    Vinv = sla.inv(Vstar)
    cf = sla.cho_factor(Om, lower=True)
    OX = sla.cho_solve(cf, Xs)
    Oy = sla.cho_solve(cf, ds.y)
    B = Vinv + Xs.T @ OX
    b = Vinv @ mu + Xs.T @ Oy
    V = sla.inv(B)
    g = sla.solve(B, b, assume_a="pos")
    yQy = float(ds.y @ Oy)
    a_star = prior.a_sigma + ds.n / 2.0
    b_star = prior.b_sigma + 0.5 * (float(mu @ Vinv @ mu) + yQy - float(b @ g))
    r = 0 if J is None else J.shape[1]
    return ConjugateFit(B, b, g, V, a_star, b_star, ds.n, ds.p, r, yQy)


def dense_log_det(ds_coords, alpha, phi, knots=None, jitter=1e-8) -> float:
    Om, _, _ = _dense_pieces(np.asarray(ds_coords, dtype=float), alpha, phi, knots, jitter)
    return float(np.linalg.slogdet(Om)[1])


def dense_krig(s, ds: SpatialDataset, alpha: float, phi: float, knots=None, prior: PriorSpec | None = None, x=None, jitter: float = 1e-8) -> PredictiveDistribution:
    """Kriging predictive distribution at ``s`` conditioning on every training location.

    Uses the same predictive form as the sparse predictor, with dense
    solves in place of neighbor blocks. ``x`` holds the covariates of the
    new points (intercept only when omitted).
    """
    _check_size(ds.n)
    prior = PriorSpec.default(ds.p) if prior is None else prior
    S0 = np.atleast_2d(np.asarray(s, dtype=float))
    x = np.ones((len(S0), 1)) if x is None else np.atleast_2d(np.asarray(x, dtype=float))
    post = dense_posterior(ds, knots, alpha, phi, prior, jitter)
    Om, J, Rs = _dense_pieces(ds.coords, alpha, phi, knots, jitter)
    E = np.exp(-phi * cdist(S0, ds.coords))
    e00 = np.full(len(S0), 1.0 + alpha)
    Xs, xs = ds.X, x
    if J is not None:
        kc = knots.knots if isinstance(knots, KnotSet) else np.asarray(knots, dtype=float)
        J0 = sla.solve(Rs, np.exp(-phi * cdist(S0, kc)).T, assume_a="pos").T
        E = E - J0 @ Rs @ J.T
        e00 = e00 - np.einsum("qi,ij,qj->q", J0, Rs, J0)
        Xs, xs = np.hstack([ds.X, J]), np.hstack([x, J0])
    W = sla.solve(Om, E.T, assume_a="pos").T
    mean = xs @ post.g + W @ (ds.y - Xs @ post.g)
    v0 = np.einsum("qi,ij,qj->q", xs, post.V, xs) + e00 - np.sum(W * E, axis=1)
    var = post.b_star * v0 / (post.a_star - 1.0)
    if np.ndim(s) == 1:
        return PredictiveDistribution(float(mean[0]), float(var[0]), float(v0[0]))
    return PredictiveDistribution(mean, var, v0)
