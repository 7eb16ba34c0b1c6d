"""End-to-end fitting: ordering, neighbor sets, factorization and posterior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .conjugate import AugmentedDesign, ConjugateFit, PriorSpec, augment_design, fit
from .covariance import (
    DEFAULT_JITTER,
    CorrelationOperator,
    CovarianceSpec,
    MarginalOperator,
    OmegaOperator,
    ResidualCorrelation,
)
from .geometry import KnotSet, NeighborGraph, SpatialDataset, bounding_box, build_ordering, knot_grid, neighbor_sets
from .nngp import SparseFactor, factorize, identity_factor


@dataclass
class SpatialModel:
    """A fitted conjugate NNGP (``rc is None``) or SLGP model.

    Training arrays are stored in the model's location ordering; ``order``
    maps ordered rows back to the input rows.
    """

    cov: CovarianceSpec
    m: int
    prior: PriorSpec
    order: np.ndarray
    coords: np.ndarray
    y: np.ndarray
    X: np.ndarray
    rc: ResidualCorrelation | None
    op: CorrelationOperator
    design: AugmentedDesign
    factor: SparseFactor
    fit: ConjugateFit
    ordering: str = "first-coordinate"
    _tree: cKDTree | None = None

    @property
    def variant(self) -> str:
        return "nngp" if self.rc is None else "slgp"

    @property
    def knots(self) -> KnotSet | None:
        return None if self.rc is None else self.rc.knots

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.coords)
        return self._tree


def resolve_knots(knots, coords) -> KnotSet | None:
    """Accept a KnotSet, an (r, 2) array, a target count, or None."""
    if knots is None or isinstance(knots, KnotSet):
        return knots
    if np.isscalar(knots):
        return knot_grid(bounding_box(coords), int(knots))
    return KnotSet(knots)


def build_operator(coords, cov: CovarianceSpec, knots: KnotSet | None, jitter=DEFAULT_JITTER):
    if knots is None:
        return MarginalOperator(coords, cov.phi, cov.alpha), None
    rc = ResidualCorrelation(knots, cov.phi, cov.alpha, jitter)
    return OmegaOperator(coords, rc), rc


def fit_model(
    ds: SpatialDataset,
    phi: float,
    alpha: float,
    m: int = 15,
    knots=None,
    prior: PriorSpec | None = None,
    ordering: str = "first-coordinate",
    jitter: float = DEFAULT_JITTER,
    threads: int = 1,
) -> SpatialModel:
    """Fit the conjugate model at fixed (alpha, phi).

    ``knots`` selects the variant: None gives the NNGP response model,
    anything else the sparse-plus-low-rank model (see :func:`resolve_knots`).
    """
    cov = CovarianceSpec(phi, alpha)
    prior = PriorSpec.default(ds.p) if prior is None else prior
    knots = resolve_knots(knots, ds.coords)
    order = build_ordering(ds.coords, ordering)
    coords = ds.coords[order]
    graph = neighbor_sets(coords, m)
    op, rc = build_operator(coords, cov, knots, jitter)
    return _fit_ordered(cov, m, prior, order, coords, ds.y[order], ds.X[order], op, rc, graph.nbrs, ordering, threads)


def _fit_ordered(cov, m, prior, order, coords, y, X, op, rc, nbrs, ordering, threads):
    factor = factorize(op, NeighborGraph(nbrs), threads=threads)
    J = None if rc is None else rc.J_from_loadings(op.H)
    design = augment_design(X, J, rc, prior)
    post = fit(y, design, factor, prior)
    return SpatialModel(cov, m, prior, order, coords, y, X, rc, op, design, factor, post, ordering)


def fit_nonspatial(ds: SpatialDataset, prior: PriorSpec | None = None) -> ConjugateFit:
    """Conjugate Bayesian linear regression with independent errors."""
    prior = PriorSpec.default(ds.p) if prior is None else prior
    design = augment_design(ds.X, prior=prior)
    return fit(ds.y, design, identity_factor(ds.n), prior)


def predict_nonspatial(post: ConjugateFit, X_new) -> tuple[np.ndarray, np.ndarray]:
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    mean = X_new @ post.g
    v0 = np.einsum("qk,kl,ql->q", X_new, post.V, X_new) + 1.0
    return mean, post.b_star * v0 / (post.a_star - 1.0)
