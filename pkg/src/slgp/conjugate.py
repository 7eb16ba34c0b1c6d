"""Closed-form Normal-Inverse-Gamma posterior for (beta*, sigma2) at fixed
(alpha, phi), for both the NNGP and the sparse-plus-low-rank variants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag, cho_solve, solve_triangular

from .covariance import ResidualCorrelation
from .nngp import SparseFactor


@dataclass(frozen=True)
class PriorSpec:
    mu_beta: np.ndarray
    V_beta: np.ndarray
    a_sigma: float = 2.0
    b_sigma: float = 1.0

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu_beta, dtype=float))
        V = np.atleast_2d(np.asarray(self.V_beta, dtype=float))
        if V.shape != (len(mu), len(mu)):
            raise ValueError(f"V_beta shape {V.shape} does not match mu_beta length {len(mu)}")
        if not np.allclose(V, V.T):
            raise ValueError("V_beta must be symmetric")
        try:
            np.linalg.cholesky(V)
        except np.linalg.LinAlgError:
            raise ValueError("V_beta must be positive definite") from None
        if not self.a_sigma > 1:
            raise ValueError("a_sigma must exceed 1")
        if not self.b_sigma > 0:
            raise ValueError("b_sigma must be positive")
        object.__setattr__(self, "mu_beta", mu)
        object.__setattr__(self, "V_beta", V)

    @classmethod
    def default(cls, p: int, v_scale: float = 1e4, a_sigma: float = 2.0, b_sigma: float = 1.0):
        return cls(np.zeros(p), v_scale * np.eye(p), a_sigma, b_sigma)

    @property
    def p(self) -> int:
        return len(self.mu_beta)


@dataclass(frozen=True)
class AugmentedDesign:
    """X* = [X | J], prior mean (mu_beta, 0) and block-diagonal prior precision."""

    X_star: np.ndarray
    mu_star: np.ndarray
    V_star_inv: np.ndarray
    p: int
    r: int


@dataclass(frozen=True)
class ConjugateFit:
    B: np.ndarray
    b_vec: np.ndarray
    g: np.ndarray
    V: np.ndarray
    a_star: float
    b_star: float
    n: int
    p: int
    r: int
    yQy: float = np.nan

    @property
    def beta_hat(self) -> np.ndarray:
        return self.g

    @property
    def sigma2_hat(self) -> float:
        return point_estimates(self)[1]


def augment_design(X, J=None, rc: ResidualCorrelation | None = None, prior: PriorSpec | None = None) -> AugmentedDesign:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    prior = PriorSpec.default(p) if prior is None else prior
    if prior.p != p:
        raise ValueError(f"prior has {prior.p} coefficients, design has {p}")
    if (J is None) != (rc is None):
        raise ValueError("J and the residual correlation must be given together")
    Vb_inv = np.linalg.inv(prior.V_beta)
    Vb_inv = 0.5 * (Vb_inv + Vb_inv.T)
    if J is None:
        return AugmentedDesign(X, prior.mu_beta.copy(), Vb_inv, p, 0)
    J = np.asarray(J, dtype=float)
    if J.shape != (n, rc.r):
        raise ValueError(f"J has shape {J.shape}, expected {(n, rc.r)}")
    X_star = np.hstack([X, J])
    mu_star = np.concatenate([prior.mu_beta, np.zeros(rc.r)])
    return AugmentedDesign(X_star, mu_star, block_diag(Vb_inv, rc.R_star_inv()), p, rc.r)


def fit(y, design: AugmentedDesign, factor: SparseFactor, prior: PriorSpec) -> ConjugateFit:
    """Posterior of (beta*, sigma2) given y ~ N(X* beta*, sigma2 Gamma~).

    ``y`` and the rows of ``design`` must follow the factor's ordering.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    n = len(y)
    if design.X_star.shape[0] != n or factor.n != n:
        raise ValueError(
            f"sizes differ: y {n}, design {design.X_star.shape[0]}, factor {factor.n}"
        )
    U = factor.whiten(design.X_star)
    wy = factor.whiten(y)
    B = design.V_star_inv + U.T @ U
    B = 0.5 * (B + B.T)
    Vmu = design.V_star_inv @ design.mu_star
    b = Vmu + U.T @ wy
    try:
        L = np.linalg.cholesky(B)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "posterior precision B is not positive definite (collinear design or degenerate prior)"
        ) from None
    g = cho_solve((L, True), b)
    Linv = solve_triangular(L, np.eye(len(b)), lower=True)
    V = Linv.T @ Linv
    yQy = float(wy @ wy)
    a_star = prior.a_sigma + n / 2.0
    b_star = prior.b_sigma + 0.5 * (float(design.mu_star @ Vmu) + yQy - float(b @ g))
    return ConjugateFit(B, b, g, V, a_star, b_star, n, design.p, design.r, yQy)


def point_estimates(fit: ConjugateFit) -> tuple[np.ndarray, float]:
    """Posterior mean of beta* and sigma2_hat = b* / (a* - 1)."""
    if not fit.a_star > 1:
        raise ValueError(f"a* = {fit.a_star} must exceed 1 for a finite posterior mean")
    return fit.g, fit.b_star / (fit.a_star - 1.0)
