"""Conjugate nearest-neighbor and sparse-plus-low-rank Gaussian process
models for interpolating large point-referenced datasets."""

from .conjugate import ConjugateFit, PriorSpec, augment_design, fit, point_estimates
from .covariance import (
    CovarianceSpec,
    MarginalOperator,
    OmegaOperator,
    ResidualCorrelation,
    build_J,
    corr_matrix,
    correlation,
    omega_entry,
    residual_gamma,
)
from .crossval import (
    CvConfig,
    ScoreGrid,
    crps_gaussian,
    grid_search,
    kfold_split,
    linear_grid,
    phi_from_effective_range,
    rmspe,
)
from .geometry import (
    KnotSet,
    NeighborGraph,
    SpatialDataset,
    build_ordering,
    knot_grid,
    neighbor_sets,
    predict_neighbors,
)
from .model import SpatialModel, fit_model, fit_nonspatial, predict_nonspatial
from .nngp import SparseFactor, factorize, log_det, qf
from .predict import PredictiveDistribution, predict_batch, predict_one
from .simulate import GeneratorSpec, dense_krig, dense_posterior, simulate_gp

__version__ = "0.1.0"
