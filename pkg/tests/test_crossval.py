import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import slgp.model
from slgp.covariance import DenseOperator, MarginalOperator, OmegaOperator, ResidualCorrelation
from slgp.crossval import (
    CvConfig,
    FoldError,
    ScoreGrid,
    crps_gaussian,
    grid_search,
    kfold_split,
    linear_grid,
    phi_from_effective_range,
    rmspe,
)
from slgp.geometry import SpatialDataset, build_ordering, knot_grid, neighbor_sets
from slgp.model import fit_model
from slgp.nngp import factorize
from slgp.predict import predict_batch
from slgp.simulate import GeneratorSpec, simulate_gp


@pytest.fixture(scope="module")
def small():
    return simulate_gp(GeneratorSpec(150, seed=31, beta=(0.0, 1.0)))


class TestKfold:
    def test_even(self):
        assert np.bincount(kfold_split(10, 5, 1)).tolist() == [2] * 5

    def test_deterministic(self):
        assert np.array_equal(kfold_split(57, 4, 9), kfold_split(57, 4, 9))

    def test_sizes_over_seeds(self):
        for seed in range(1000):
            sizes = np.bincount(kfold_split(103, 5, seed), minlength=5)
            assert set(sizes.tolist()) <= {20, 21}

    def test_assignment_varies(self):
        # label frequency at a fixed row is roughly uniform over seeds
        counts = np.bincount([kfold_split(103, 5, s)[0] for s in range(1000)], minlength=5)
        assert counts.min() > 150

    def test_errors(self):
        with pytest.raises(ValueError):
            kfold_split(3, 5)
        with pytest.raises(ValueError):
            kfold_split(10, 1)


class TestScores:
    def test_rmspe(self):
        assert rmspe([1, 2], [1, 2]) == 0
        assert rmspe([1.5, 2.5, 0.5], [1, 2, 0]) == pytest.approx(0.5)
        assert rmspe([0, 0], [3, 4]) == pytest.approx(3.5355339059327378, rel=1e-15)
        with pytest.raises(ValueError):
            rmspe([1, 2], [1])

    def test_crps_sharp_limit(self):
        assert crps_gaussian(0.0, 1e-16, 0.3) == pytest.approx(0.3, abs=1e-6)

    def test_crps_symmetry(self):
        assert crps_gaussian(1.0, 2.0, 1.7) == pytest.approx(crps_gaussian(1.0, 2.0, 0.3), rel=1e-14)

    def test_crps_monte_carlo(self):
        rng = np.random.default_rng(12345)
        Y, Y2 = rng.standard_normal(1_000_000), rng.standard_normal(1_000_000)
        for mu, sd, obs in [(0.0, 1.0, 0.0), (1.0, 0.5, 2.1), (-2.0, 3.0, 0.4)]:
            mc = np.mean(np.abs(mu + sd * Y - obs)) - 0.5 * np.mean(np.abs(sd * (Y - Y2)))
            assert crps_gaussian(mu, sd**2, obs) == pytest.approx(mc, abs=1e-3 * max(1, sd))
        assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(0.23369, abs=1e-5)

    def test_crps_bad_variance(self):
        with pytest.raises(ValueError):
            crps_gaussian(0.0, 0.0, 1.0)

    @pytest.mark.property
    @settings(max_examples=100, deadline=None)
    @given(st.floats(-100, 100), st.floats(1e-6, 100), st.floats(-100, 100))
    def test_crps_nonnegative_and_bounded(self, mu, var, obs):
        c = crps_gaussian(mu, var, obs)
        assert c >= -1e-12
        assert c <= abs(obs - mu) + np.sqrt(var) + 1e-9

    def test_vectorised(self):
        c = crps_gaussian(np.zeros(3), np.ones(3), np.array([0.0, 1.0, -1.0]))
        assert c.shape == (3,) and c[1] == pytest.approx(c[2])


class TestHelpers:
    def test_linear_grid(self):
        g = linear_grid((0.1, 1.9), 3, (3, 30), 2)
        assert g == [(0.1, 3.0), (0.1, 30.0), (1.0, 3.0), (1.0, 30.0), (1.9, 3.0), (1.9, 30.0)]

    def test_effective_range(self):
        assert np.exp(-phi_from_effective_range(0.25) * 0.25) == pytest.approx(0.05, rel=1e-14)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CvConfig(grid=[])
        with pytest.raises(ValueError):
            CvConfig(grid=[(0.0, 1.0)])
        with pytest.raises(ValueError):
            CvConfig(grid=[(1.0, 1.0)], K=1)
        with pytest.raises(ValueError):
            CvConfig(grid=[(1.0, 1.0)], scoring="mae")

    def test_tie_break(self):
        grid = [(0.5, 3.0), (0.1, 9.0), (0.1, 6.0), (0.9, 1.0)]
        s = np.array([[1.0], [1.0], [1.0], [2.0]])
        assert ScoreGrid(grid, s, s, "crps").selected == (0.1, 6.0)


class TestGridSearch:
    def test_single_candidate(self, small):
        sg = grid_search(small, CvConfig(grid=[(0.4, 9.0)], K=3, m=8))
        assert sg.selected == (0.4, 9.0) and sg.crps.shape == (1, 3)

    def test_duplicate_grid(self, small):
        grid = linear_grid((0.2, 1.0), 2, (5, 15), 2)
        a = grid_search(small, CvConfig(grid=grid, K=3, m=8))
        b = grid_search(small, CvConfig(grid=grid + grid, K=3, m=8))
        assert a.selected == b.selected

    def test_nngp_never_builds_knots(self, small, monkeypatch):
        def boom(*a, **k):
            raise AssertionError("knot machinery constructed")
        monkeypatch.setattr(slgp.model, "ResidualCorrelation", boom)
        monkeypatch.setattr(slgp.model, "OmegaOperator", boom)
        grid_search(small, CvConfig(grid=[(0.5, 10.0), (1.0, 5.0)], K=3, m=6))

    def test_slgp_runs(self, small):
        sg = grid_search(small, CvConfig(grid=[(0.5, 10.0), (1.0, 5.0)], K=3, m=6, r_target=9))
        assert np.all(np.isfinite(sg.crps)) and np.all(sg.rmspe > 0)

    def test_matches_direct_fit(self, small):
        # one fold's score equals fitting and predicting the fold directly
        labels = kfold_split(small.n, 3, 4)
        sg = grid_search(small, CvConfig(grid=[(0.5, 10.0)], K=3, m=8, labels=labels))
        for k in range(3):
            tr, te = labels != k, labels == k
            model = fit_model(small.subset(np.flatnonzero(tr)), phi=10.0, alpha=0.5, m=8)
            d = predict_batch(model, small.coords[te], small.X[te])
            assert sg.rmspe[0, k] == pytest.approx(rmspe(d.mean, small.y[te]), rel=1e-10)
            assert sg.crps[0, k] == pytest.approx(np.mean(crps_gaussian(d.mean, d.variance, small.y[te])), rel=1e-10)

    @pytest.mark.property
    def test_fold_order_invariance(self, small):
        labels = kfold_split(small.n, 4, 2)
        perm = np.array([2, 0, 3, 1])
        a = grid_search(small, CvConfig(grid=[(0.5, 10.0), (0.2, 4.0)], K=4, m=8, labels=labels))
        b = grid_search(small, CvConfig(grid=[(0.5, 10.0), (0.2, 4.0)], K=4, m=8, labels=perm[labels]))
        np.testing.assert_allclose(a.mean_scores, b.mean_scores, rtol=1e-12)
        np.testing.assert_allclose(b.crps[:, perm], a.crps, rtol=1e-12)

    @pytest.mark.property
    def test_threads_deterministic(self, small):
        cfg = CvConfig(grid=linear_grid((0.2, 1.0), 2, (5, 15), 2), K=3, m=8, r_target=9)
        a, b = grid_search(small, cfg, threads=1), grid_search(small, cfg, threads=4)
        assert np.array_equal(a.crps, b.crps) and np.array_equal(a.rmspe, b.rmspe)

    def test_fold_failure_named(self):
        c = np.array([[0.0, 0.0], [1e-200, 0.0], [0.5, 0.5], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        ds = SpatialDataset(c, np.arange(6.0))
        with pytest.raises(FoldError, match="fold"):
            grid_search(ds, CvConfig(grid=[(1e-300, 1.0)], K=2, m=3, labels=np.array([0, 0, 1, 1, 0, 1])))


@pytest.mark.property
@pytest.mark.parametrize("knots", [None, 16])
def test_extraction_consistency(rng, knots):
    c = rng.uniform(size=(100, 2))
    c = c[build_ordering(c)]
    labels = kfold_split(100, 5, 0)
    if knots is None:
        full = MarginalOperator(c, 7.0, 0.3)
    else:
        full = OmegaOperator(c, ResidualCorrelation(knot_grid((0, 0, 1, 1), knots), 7.0, 0.3))
    idx = np.arange(100)
    dense = full.block(idx, idx)
    for k in range(5):
        tr = np.flatnonzero(labels != k)
        g = neighbor_sets(c[tr], 6)
        a = factorize(full.subset(tr), g)
        b = factorize(DenseOperator(dense[np.ix_(tr, tr)]), g)
        np.testing.assert_allclose(a.a, b.a, atol=1e-12)
        np.testing.assert_allclose(a.f, b.f, atol=1e-12)


@pytest.mark.property
def test_crps_and_rmspe_selections_agree():
    full = simulate_gp(GeneratorSpec(1250, seed=77))
    rng = np.random.default_rng(77)
    p = rng.permutation(1250)
    train, hold = full.subset(p[:1000]), full.subset(p[1000:])
    grid = linear_grid((0.1, 1.9), 4, (3, 30), 4)
    scores = {}
    for rule in ("crps", "rmspe"):
        a, phi = grid_search(train, CvConfig(grid=grid, K=5, scoring=rule, m=10)).selected
        d = predict_batch(fit_model(train, phi=phi, alpha=a, m=10), hold.coords)
        scores[rule] = (np.mean(crps_gaussian(d.mean, d.variance, hold.y)), rmspe(d.mean, hold.y))
    for i in range(2):
        assert abs(scores["crps"][i] - scores["rmspe"][i]) / scores["crps"][i] < 0.05
