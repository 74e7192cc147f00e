import math

import numpy as np
import pytest

from gbcausal.dgp import default_spec, generate
from gbcausal.errors import DomainError
from gbcausal.gibbs_cate import (
    KernelParams,
    exact_gp_posterior,
    kernel_matrix,
    predict,
    svgp_fit,
)
from gbcausal.nuisance import NuisanceConfig, cross_fit
from gbcausal.numerics import OptimizerConfig, Rng, normal_quantile
from gbcausal.pseudo import PseudoOutcomes, Strategy, cross_fitted_pseudo


def _pv(values):
    return PseudoOutcomes(np.asarray(values, dtype=float), Strategy.DR, True)


def matern52_scalar(r, lengthscale, variance):
    """Independent hand evaluation of the Matern-5/2 covariance."""
    s = math.sqrt(5.0) * r / lengthscale
    return variance * (1.0 + s + s * s / 3.0) * math.exp(-s)


class TestKernelMatrix:
    def test_zero_distance_diagonal_gets_jitter(self):
        params = KernelParams(lengthscale=2.0, variance=2.0, jitter=1e-4)
        x = np.array([[0.0, 0.0], [1.0, -1.0]])
        k = kernel_matrix(params, x, x)
        assert k[0, 0] == pytest.approx(2.0 + 1e-4, abs=1e-15)
        assert k[1, 1] == pytest.approx(2.0 + 1e-4, abs=1e-15)

    def test_matern_hand_value_at_distance_two(self):
        params = KernelParams(lengthscale=2.0, variance=2.0, jitter=1e-4)
        xa = np.array([[0.0]])
        xb = np.array([[2.0]])
        k = kernel_matrix(params, xa, xb)
        assert k[0, 0] == pytest.approx(matern52_scalar(2.0, 2.0, 2.0), abs=1e-12)
        # 2 (1 + sqrt5 + 5/3) exp(-sqrt5)
        assert k[0, 0] == pytest.approx(
            2.0 * (1.0 + math.sqrt(5.0) + 5.0 / 3.0) * math.exp(-math.sqrt(5.0)), abs=1e-12
        )

    def test_cross_matrix_carries_no_jitter(self):
        params = KernelParams()
        xa = np.array([[0.0]])
        xb = np.array([[0.0]])
        k = kernel_matrix(params, xa, xb.copy())  # equal values, same content
        # equal content means jitter is added (xa == xb elementwise)
        assert k[0, 0] == pytest.approx(params.variance + params.jitter, abs=1e-15)
        k2 = kernel_matrix(params, xa, np.array([[1e-9]]))
        assert k2[0, 0] < params.variance + params.jitter

    def test_rbf_decays_to_zero(self):
        params = KernelParams(family="RBF", lengthscale=1.0, variance=1.0, jitter=0.0)
        k = kernel_matrix(params, np.array([[0.0]]), np.array([[30.0]]))
        assert k[0, 0] <= 1e-100

    def test_rbf_hand_value(self):
        params = KernelParams(family="RBF", lengthscale=1.5, variance=0.7, jitter=0.0)
        k = kernel_matrix(params, np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]]))
        r_sq = 1.0 + 4.0
        assert k[0, 0] == pytest.approx(0.7 * math.exp(-r_sq / (2 * 1.5**2)), abs=1e-14)

    def test_validation(self):
        with pytest.raises(DomainError):
            KernelParams(family="Cubic")
        with pytest.raises(DomainError):
            KernelParams(lengthscale=0.0)
        with pytest.raises(DomainError):
            KernelParams(jitter=-1e-9)


class TestExactGp:
    def test_constant_pseudo_outcomes_reproduce_constant(self):
        params = KernelParams()
        x = Rng(1).normal((15, 2))
        gp = exact_gp_posterior(x, _pv(np.full(15, 3.3)), params, omega=1e6)
        means, variances = gp.predict(Rng(2).normal((7, 2)))
        # centering makes the residual target exactly zero
        np.testing.assert_allclose(means, 3.3, atol=1e-12)
        assert np.all(variances > 0)

    def test_single_point_formula(self):
        params = KernelParams(lengthscale=2.0, variance=2.0, jitter=1e-4)
        omega = 0.7
        x0 = np.array([[0.4, -0.2]])
        gp = exact_gp_posterior(x0, _pv([1.7]), params, omega)
        mean, var = gp.predict(x0)
        k00 = params.variance + params.jitter
        # const_mean equals the single value, so the mean reduces to it
        assert mean[0] == pytest.approx(1.7 + k00 / (k00 + 1.0 / omega) * 0.0, abs=1e-12)
        assert var[0] == pytest.approx(k00 - k00**2 / (k00 + 1.0 / omega), abs=1e-12)

    def test_two_point_hand_solve(self):
        params = KernelParams(lengthscale=2.0, variance=2.0, jitter=1e-4)
        omega = 2.0
        x = np.array([[0.0], [1.0]])
        values = np.array([1.0, 3.0])
        gp = exact_gp_posterior(x, _pv(values), params, omega)
        xq = np.array([[0.25]])
        got_mean, got_var = gp.predict(xq)
        # independent dense-solve oracle built from the hand kernel values
        kd = params.variance + params.jitter
        k01 = matern52_scalar(1.0, 2.0, 2.0)
        gram = np.array([[kd + 0.5, k01], [k01, kd + 0.5]])
        kq = np.array([matern52_scalar(0.25, 2.0, 2.0), matern52_scalar(0.75, 2.0, 2.0)])
        centered = values - values.mean()
        alpha = np.linalg.solve(gram, centered)
        want_mean = kq @ alpha + values.mean()
        want_var = kd - kq @ np.linalg.solve(gram, kq)
        assert got_mean[0] == pytest.approx(want_mean, abs=1e-10)
        assert got_var[0] == pytest.approx(want_var, abs=1e-10)

    def test_training_variance_below_prior(self):
        params = KernelParams()
        x = Rng(3).normal((30, 2))
        gp = exact_gp_posterior(x, _pv(Rng(4).normal(30)), params, omega=1.0)
        _, variances = gp.predict(x)
        assert np.all(variances <= params.variance + params.jitter)

    def test_far_query_returns_prior_variance(self):
        params = KernelParams()
        x = Rng(5).normal((25, 2))
        gp = exact_gp_posterior(x, _pv(Rng(6).normal(25)), params, omega=1.0)
        _, variances = gp.predict(np.array([[60.0, -60.0]]))
        prior_var = params.variance + params.jitter
        assert abs(variances[0] - prior_var) <= 0.05 * prior_var

    def test_size_guard(self):
        x = np.zeros((2001, 1))
        with pytest.raises(DomainError):
            exact_gp_posterior(x, _pv(np.zeros(2001)), KernelParams(), 1.0)

    def test_rejects_bad_omega(self):
        with pytest.raises(DomainError):
            exact_gp_posterior(np.zeros((2, 1)), _pv([1.0, 2.0]), KernelParams(), 0.0)


class TestSvgp:
    def _training_setup(self, n=40, seed=42):
        rng = Rng(seed)
        x = rng.normal((n, 2))
        values = 2.0 + x[:, 0] + 0.5 * np.sin(3.0 * x[:, 1]) + 0.7 * rng.normal(n)
        omega = 1.0 / float(np.var(values, ddof=1))
        return x, _pv(values), omega

    def test_full_inducing_matches_exact_gp(self):
        x, pv, omega = self._training_setup(n=40)
        params = KernelParams()
        exact = exact_gp_posterior(x, pv, params, omega)
        gp = svgp_fit(x, pv, params, omega, 40, OptimizerConfig(), Rng(7))
        xq = Rng(8).normal((50, 2))
        want_mean, want_var = exact.predict(xq)
        got_mean, got_var = predict(gp, xq)
        assert np.max(np.abs(got_mean - want_mean)) <= 1e-2
        ratio = np.sqrt(got_var / want_var)
        assert ratio.min() >= 0.9 and ratio.max() <= 1.1

    def test_constant_pseudo_outcomes(self):
        x = Rng(9).normal((30, 2))
        gp = svgp_fit(x, _pv(np.full(30, -1.2)), KernelParams(), 1.0, 10, OptimizerConfig(epochs=500), Rng(10))
        means, variances = predict(gp, Rng(11).normal((20, 2)))
        np.testing.assert_allclose(means, -1.2, atol=1e-2)
        assert np.all(variances > 0)

    def test_translation_equivariance(self):
        x, pv, omega = self._training_setup(n=25)
        shift = 3.7
        pv_shift = _pv(pv.values + shift)
        config = OptimizerConfig(epochs=800)
        gp_a = svgp_fit(x, pv, KernelParams(), omega, 12, config, Rng(12))
        gp_b = svgp_fit(x, pv_shift, KernelParams(), omega, 12, config, Rng(12))
        xq = Rng(13).normal((15, 2))
        mean_a, var_a = predict(gp_a, xq)
        mean_b, var_b = predict(gp_b, xq)
        np.testing.assert_allclose(mean_b - mean_a, shift, atol=1e-10)
        np.testing.assert_allclose(var_a, var_b, atol=1e-10)

    def test_pipeline_on_d4_is_finite(self):
        spec = default_spec("D4")
        ds = generate(spec, 1000, Rng(14))
        cf = cross_fit(ds, 5, NuisanceConfig(), Rng(15))
        pv = cross_fitted_pseudo(ds, cf, Strategy.DR)
        omega = 1.0 / float(np.var(pv.values, ddof=1))
        gp = svgp_fit(ds.x, pv, KernelParams(), omega, 20, OptimizerConfig(), Rng(16))
        xq = Rng(17).normal((100, 2))
        means, variances = predict(gp, xq)
        assert np.all(np.isfinite(means))
        assert np.all(variances > 0)

    def test_pointwise_cri_has_gaussian_width(self):
        x, pv, omega = self._training_setup(n=20)
        gp = svgp_fit(x, pv, KernelParams(), omega, 10, OptimizerConfig(epochs=300), Rng(18))
        means, variances = predict(gp, x[:5])
        z = normal_quantile(0.975)
        lo = means - z * np.sqrt(variances)
        hi = means + z * np.sqrt(variances)
        np.testing.assert_allclose(hi - lo, 2 * z * np.sqrt(variances), atol=1e-12)

    def test_inducing_bounds(self):
        x, pv, omega = self._training_setup(n=10)
        with pytest.raises(DomainError):
            svgp_fit(x, pv, KernelParams(), omega, 0, OptimizerConfig(epochs=10), Rng(0))
        with pytest.raises(DomainError):
            svgp_fit(x, pv, KernelParams(), omega, 11, OptimizerConfig(epochs=10), Rng(0))

    def test_deterministic_given_rng(self):
        x, pv, omega = self._training_setup(n=15)
        config = OptimizerConfig(epochs=100)
        a = svgp_fit(x, pv, KernelParams(), omega, 8, config, Rng(20, 5))
        b = svgp_fit(x, pv, KernelParams(), omega, 8, config, Rng(20, 5))
        np.testing.assert_array_equal(a.q_mean, b.q_mean)
        np.testing.assert_array_equal(a.q_cov, b.q_cov)
        np.testing.assert_array_equal(a.inducing_x, b.inducing_x)

    def test_q_cov_is_spd(self):
        x, pv, omega = self._training_setup(n=30)
        gp = svgp_fit(x, pv, KernelParams(), omega, 15, OptimizerConfig(epochs=300), Rng(21))
        eigvals = np.linalg.eigvalsh(gp.q_cov)
        assert eigvals.min() > -1e-10


class TestVarianceMonotonicity:
    def test_exact_gp_variance_non_increasing_in_n(self):
        params = KernelParams()
        rng = Rng(22)
        x_all = rng.normal((160, 2))
        v_all = rng.normal(160)
        xq = np.array([[0.3, -0.4]])
        prev = math.inf
        for n in (10, 20, 40, 80, 160):
            gp = exact_gp_posterior(x_all[:n], _pv(v_all[:n]), params, omega=1.0)
            _, var = gp.predict(xq)
            assert var[0] <= prev + 1e-12
            prev = var[0]
