"""K-fold cross-validation over an (alpha, phi) grid with CRPS or RMSPE."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .conjugate import PriorSpec
from .covariance import DEFAULT_JITTER, CovarianceSpec
from .geometry import SpatialDataset, bounding_box, build_ordering, knot_grid, neighbor_sets, query_neighbors
from .model import _fit_ordered, build_operator
from .predict import krige

log = logging.getLogger(__name__)

SCORES = ("crps", "rmspe")


def rmspe(pred_means, observed) -> float:
    pred = np.asarray(pred_means, dtype=float).reshape(-1)
    obs = np.asarray(observed, dtype=float).reshape(-1)
    if len(pred) != len(obs):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(obs)} observations")
    if len(pred) == 0:
        raise ValueError("need at least one prediction")
    return float(np.sqrt(np.mean((pred - obs) ** 2)))


def crps_gaussian(mean, variance, observed):
    """Closed-form CRPS of N(mean, variance) at ``observed``; vectorised."""
    variance = np.asarray(variance, dtype=float)
    if np.any(~(variance > 0)):
        raise ValueError("variance must be positive")
    sd = np.sqrt(variance)
    z = (np.asarray(observed, dtype=float) - np.asarray(mean, dtype=float)) / sd
    out = sd * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / np.sqrt(np.pi))
    return float(out) if np.ndim(out) == 0 else out


def kfold_split(n: int, K: int, seed=0) -> np.ndarray:
    """Random fold labels in 0..K-1 with fold sizes differing by at most one."""
    if K < 2:
        raise ValueError("K must be at least 2")
    if n < K:
        raise ValueError(f"cannot split {n} rows into {K} folds")
    rng = np.random.default_rng(seed)
    return rng.permutation(np.arange(n) % K)


def linear_grid(alpha_bounds, n_alpha, phi_bounds, n_phi) -> list[tuple[float, float]]:
    """All (alpha, phi) pairs of two linearly spaced axes, alpha-major.

    Points are rounded to 12 significant digits so that 1.0 prints as 1.0.
    """
    alphas = [float(f"{v:.12g}") for v in np.linspace(*alpha_bounds, n_alpha)]
    phis = [float(f"{v:.12g}") for v in np.linspace(*phi_bounds, n_phi)]
    return [(a, p) for a in alphas for p in phis]


def phi_from_effective_range(d0: float) -> float:
    """Decay at which exponential correlation falls to 0.05 at distance d0."""
    if not d0 > 0:
        raise ValueError("effective range must be positive")
    return -np.log(0.05) / d0


@dataclass(frozen=True)
class CvConfig:
    grid: list
    K: int = 5
    scoring: str = "crps"
    m: int = 15
    r_target: int | None = None
    seed: int = 0
    ordering: str = "first-coordinate"
    jitter: float = DEFAULT_JITTER
    labels: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if len(self.grid) < 1:
            raise ValueError("grid must contain at least one (alpha, phi) pair")
        for a, p in self.grid:
            if not (a > 0 and p > 0):
                raise ValueError(f"grid entries need alpha > 0 and phi > 0, got ({a}, {p})")
        if self.scoring not in SCORES:
            raise ValueError(f"scoring must be one of {SCORES}")
        if self.m < 1:
            raise ValueError("m must be at least 1")


@dataclass(frozen=True)
class ScoreGrid:
    """Per-candidate fold scores; ``crps``/``rmspe`` have shape (G, K)."""

    grid: list
    crps: np.ndarray
    rmspe: np.ndarray
    scoring: str

    @property
    def fold_scores(self) -> np.ndarray:
        return self.crps if self.scoring == "crps" else self.rmspe

    @property
    def mean_scores(self) -> np.ndarray:
        return self.fold_scores.mean(axis=1)

    @property
    def argmin(self) -> int:
        s = self.mean_scores
        a = np.array([c[0] for c in self.grid])
        p = np.array([c[1] for c in self.grid])
        return int(np.lexsort((p, a, s))[0])

    @property
    def selected(self) -> tuple[float, float]:
        return tuple(self.grid[self.argmin])


class FoldError(RuntimeError):
    pass


@dataclass
class _Fold:
    train: np.ndarray  # positions in the globally ordered arrays
    test: np.ndarray
    nbrs: np.ndarray
    pred_nbrs: np.ndarray


def _prepare_folds(coords_o, labels_o, K, m):
    folds = []
    for k in range(K):
        train = np.flatnonzero(labels_o != k)
        test = np.flatnonzero(labels_o == k)
        if len(train) == 0 or len(test) == 0:
            raise ValueError(f"fold {k} leaves an empty training or test set")
        graph = neighbor_sets(coords_o[train], m)
        pn = query_neighbors(coords_o[test], coords_o[train], m)
        folds.append(_Fold(train, test, graph.nbrs, pn))
    return folds


def evaluate_fold(op_full, rc, fold, y_o, X_o, cov, m, prior):
    """Fit on a fold's training rows and score its held-out rows."""
    op = op_full.subset(fold.train)
    model = _fit_ordered(
        cov, m, prior, fold.train, op.coords, y_o[fold.train], X_o[fold.train],
        op, rc, fold.nbrs, "first-coordinate", 1,
    )
    pts = op_full.coords[fold.test]
    xs = X_o[fold.test]
    H_new = None
    if rc is not None:
        H_new = op_full.H[fold.test]
        xs = np.hstack([xs, rc.J_from_loadings(H_new)])
    post = model.fit
    mean, var, _ = krige(op, model.y, model.design.X_star, post.g, post.V, post.a_star, post.b_star, pts, xs, fold.pred_nbrs, H_new)
    obs = y_o[fold.test]
    return float(np.mean(crps_gaussian(mean, var, obs))), rmspe(mean, obs)


def grid_search(ds: SpatialDataset, cfg: CvConfig, prior: PriorSpec | None = None, threads: int = 1) -> ScoreGrid:
    """Score every (alpha, phi) candidate by K-fold cross-validation.

    Neighbor sets per fold are computed once and shared by all candidates;
    for each candidate the correlation operator (and knot loadings) over the
    full data are built once and restricted to each fold's training rows.
    Fold scores are averaged (scored, then averaged).
    """
    prior = PriorSpec.default(ds.p) if prior is None else prior
    labels = kfold_split(ds.n, cfg.K, cfg.seed) if cfg.labels is None else np.asarray(cfg.labels)
    if len(labels) != ds.n:
        raise ValueError("fold labels must have one entry per row")
    K = cfg.K
    order = build_ordering(ds.coords, cfg.ordering)
    coords_o, y_o, X_o = ds.coords[order], ds.y[order], ds.X[order]
    folds = _prepare_folds(coords_o, labels[order], K, cfg.m)
    knots = None if cfg.r_target is None else knot_grid(bounding_box(ds.coords), cfg.r_target)

    G = len(cfg.grid)
    crps = np.empty((G, K))
    rm = np.empty((G, K))

    def run(gi):
        alpha, phi = cfg.grid[gi]
        cov = CovarianceSpec(phi, alpha)
        op_full, rc = build_operator(coords_o, cov, knots, cfg.jitter)
        for k, fold in enumerate(folds):
            try:
                crps[gi, k], rm[gi, k] = evaluate_fold(op_full, rc, fold, y_o, X_o, cov, cfg.m, prior)
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise FoldError(f"candidate (alpha={alpha}, phi={phi}) fold {k}: {exc}") from exc
        log.debug("alpha=%g phi=%g crps=%.5f rmspe=%.5f", alpha, phi, crps[gi].mean(), rm[gi].mean())

    if threads > 1 and G > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(run, range(G)))
    else:
        for gi in range(G):
            run(gi)
    return ScoreGrid(list(map(tuple, cfg.grid)), crps, rm, cfg.scoring)
