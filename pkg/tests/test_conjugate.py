import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slgp.conjugate import ConjugateFit, PriorSpec, augment_design, fit, point_estimates
from slgp.covariance import ResidualCorrelation, build_J
from slgp.geometry import KnotSet, SpatialDataset, knot_grid
from slgp.model import fit_model, fit_nonspatial
from slgp.nngp import identity_factor
from slgp.simulate import GeneratorSpec, dense_posterior, simulate_gp


def small_fit(a_star, b_star):
    z = np.zeros((1, 1))
    return ConjugateFit(z, np.zeros(1), np.zeros(1), z, a_star, b_star, 1, 1, 0)


class TestPrior:
    def test_defaults(self):
        pr = PriorSpec.default(3)
        assert pr.a_sigma == 2 and pr.b_sigma == 1
        np.testing.assert_array_equal(pr.V_beta, 1e4 * np.eye(3))

    @pytest.mark.parametrize("kw", [
        dict(mu_beta=[0, 0], V_beta=np.eye(3)),
        dict(mu_beta=[0], V_beta=[[-1.0]]),
        dict(mu_beta=[0], V_beta=[[1.0]], a_sigma=1.0),
        dict(mu_beta=[0], V_beta=[[1.0]], b_sigma=0.0),
        dict(mu_beta=[0, 0], V_beta=[[1.0, 0.5], [0.0, 1.0]]),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PriorSpec(**kw)


class TestAugment:
    def test_no_knots(self, rng):
        X = rng.normal(size=(10, 2))
        d = augment_design(X)
        assert d.X_star is X or np.array_equal(d.X_star, X)
        assert d.p + d.r == 2

    def test_with_knots(self, rng):
        S = rng.uniform(size=(30, 2))
        rc = ResidualCorrelation(knot_grid((0, 0, 1, 1), 4), 3.0, 0.1)
        d = augment_design(np.ones((30, 1)), build_J(S, rc), rc)
        assert d.X_star.shape == (30, 5) and np.all(d.X_star[:, 0] == 1)
        np.testing.assert_allclose(d.V_star_inv[1:, 1:] @ rc.R_star, np.eye(4), atol=1e-6)
        assert np.all(d.V_star_inv[0, 1:] == 0) and np.all(d.mu_star == 0)

    def test_mismatch(self, rng):
        rc = ResidualCorrelation(knot_grid((0, 0, 1, 1), 4), 3.0, 0.1)
        with pytest.raises(ValueError):
            augment_design(np.ones((30, 1)), np.ones((29, 4)), rc)
        with pytest.raises(ValueError):
            augment_design(np.ones((30, 2)), prior=PriorSpec.default(1))


class TestFit:
    def test_a_star(self):
        y = np.zeros(25_000)
        post = fit(y, augment_design(np.ones((25_000, 1))), identity_factor(25_000), PriorSpec.default(1))
        assert post.a_star == 12_502

    def test_diffuse_mean(self, rng):
        y = rng.normal(3.0, 2.0, size=500)
        pr = PriorSpec.default(1, v_scale=1e6)
        post = fit(y, augment_design(np.ones((500, 1)), prior=pr), identity_factor(500), pr)
        assert post.g[0] == pytest.approx(y.mean(), rel=1e-4)

    @pytest.mark.property
    def test_ols_limit(self, rng):
        X = np.column_stack([np.ones(80), rng.normal(size=(80, 2))])
        y = X @ [1.0, -2.0, 0.5] + rng.normal(size=80)
        pr = PriorSpec.default(3, v_scale=1e10)
        post = fit(y, augment_design(X, prior=pr), identity_factor(80), pr)
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        np.testing.assert_allclose(post.g, ols, rtol=1e-7, atol=1e-8)

    @pytest.mark.property
    @pytest.mark.parametrize("knots", [None, 25])
    def test_matches_dense(self, knots):
        ds = simulate_gp(GeneratorSpec(40, seed=3, beta=(1.0, 0.5)))
        pr = PriorSpec.default(2)
        model = fit_model(ds, phi=5.0, alpha=0.4, m=39, knots=knots, prior=pr)
        ref = dense_posterior(ds, model.knots, 0.4, 5.0, pr)
        np.testing.assert_allclose(model.fit.g, ref.g, rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(model.fit.V, ref.V, rtol=1e-8, atol=1e-8)
        assert model.fit.b_star == pytest.approx(ref.b_star, rel=1e-8)
        assert model.fit.a_star == ref.a_star

    @pytest.mark.property
    def test_nngp_slgp_consistency(self):
        ds = simulate_gp(GeneratorSpec(60, seed=5, beta=(0.5, 1.0)))
        pr = PriorSpec.default(2)
        knots = KnotSet(ds.coords[::6])
        nn = fit_model(ds, phi=8.0, alpha=0.3, m=59, prior=pr)
        sl = fit_model(ds, phi=8.0, alpha=0.3, m=59, knots=knots, prior=pr)
        ref = dense_posterior(ds, None, 0.3, 8.0, pr)
        np.testing.assert_allclose(nn.fit.g, ref.g, atol=1e-6)
        np.testing.assert_allclose(sl.fit.g[:2], ref.g, atol=1e-6)
        np.testing.assert_allclose(sl.fit.V[:2, :2], ref.V, atol=1e-6)

    def test_collinear_design(self, rng):
        X = np.ones((20, 2))
        pr = PriorSpec.default(2, v_scale=1e30)
        with pytest.raises(np.linalg.LinAlgError):
            fit(rng.normal(size=20), augment_design(X, prior=pr), identity_factor(20), pr)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            fit(np.zeros(5), augment_design(np.ones((4, 1))), identity_factor(4), PriorSpec.default(1))

    @pytest.mark.property
    def test_scale_equivariance(self):
        ds = simulate_gp(GeneratorSpec(150, seed=11, beta=(2.0, -1.0)))
        pr = PriorSpec(np.zeros(2), 1e12 * np.eye(2), 2.0, 1e-12)
        a = fit_model(ds, phi=6.0, alpha=0.5, m=10, prior=pr)
        ds10 = SpatialDataset(ds.coords, 10 * ds.y, ds.X)
        b = fit_model(ds10, phi=6.0, alpha=0.5, m=10, prior=pr)
        np.testing.assert_allclose(b.fit.g, 10 * a.fit.g, rtol=1e-8)
        assert b.fit.b_star - pr.b_sigma == pytest.approx(100 * (a.fit.b_star - pr.b_sigma), rel=1e-8)

    @pytest.mark.property
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([None, 9]), st.integers(1, 12))
    def test_residual_term_nonnegative(self, seed, knots, m):
        ds = simulate_gp(GeneratorSpec(60, seed=seed, beta=(1.0, 1.0)))
        pr = PriorSpec.default(2)
        post = fit_model(ds, phi=7.0, alpha=0.2, m=m, knots=knots, prior=pr).fit
        assert post.b_star - pr.b_sigma >= 0
        assert post.sigma2_hat > 0


class TestPointEstimates:
    def test_ratio(self):
        assert point_estimates(small_fit(3.0, 4.0))[1] == 2.0

    def test_a_star_too_small(self):
        with pytest.raises(ValueError):
            point_estimates(small_fit(1.0, 4.0))

    def test_sigma2_recovered(self):
        ds = simulate_gp(GeneratorSpec(2000, sigma2=1.0, phi=12.0, tau2=0.5, seed=7))
        s2 = fit_model(ds, phi=12.0, alpha=0.5, m=15).fit.sigma2_hat
        assert 0.7 <= s2 <= 1.4

    def test_nonspatial(self, rng):
        ds = SpatialDataset(rng.uniform(size=(50, 2)), rng.normal(size=50))
        post = fit_nonspatial(ds)
        assert post.sigma2_hat > 0 and post.r == 0
