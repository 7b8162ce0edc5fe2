import numpy as np
import pytest

from stmp.denoisers import (
    VARIANCE_FLOOR,
    DenoiserOutput,
    DivergenceEstimatorConfig,
    denoise_tweedie,
    tweedie_denoiser,
    variance_divergence,
    variance_residual,
)
from stmp.operators import adjoint, forward, make_operator, sample_model
from stmp.priors import GaussianPrior, GmmPrior, mmse_oracle, sample_prior

GMM = GmmPrior(weights=(0.5, 0.5), means=(-1.0, 1.0), variances=(0.1, 0.1))


class TestDenoiserOutput:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            DenoiserOutput(mean=np.array([np.nan]), variance=0.1)
        with pytest.raises(ValueError):
            DenoiserOutput(mean=np.zeros(2), variance=0.0)
        with pytest.raises(ValueError):
            DenoiserOutput(mean=np.zeros(2), variance=np.inf)


class TestTweedie:
    def test_gaussian_conjugate_case(self):
        out = denoise_tweedie(GaussianPrior(0.0, 1.0), np.array([2.0, -2.0]), 1.0)
        np.testing.assert_allclose(out.mean, [1.0, -1.0], atol=1e-12)
        assert abs(out.variance - 0.5) < 1e-12

    def test_variance_strictly_below_prior_variance(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            v = float(np.exp(rng.uniform(np.log(0.01), np.log(10))))
            r = sample_prior(GMM, 16, rng) + np.sqrt(v) * rng.standard_normal(16)
            out = denoise_tweedie(GMM, r, v)
            assert 0.0 < out.variance < v

    def test_matches_oracle_on_scalar_grid(self):
        for v in np.geomspace(0.05, 5.0, 8):
            for r in np.linspace(-2.5, 2.5, 8):
                out = denoise_tweedie(GMM, np.array([r]), float(v))
                mean_o, var_o = mmse_oracle(GMM, float(r), float(v))
                assert abs(out.mean[0] - mean_o) < 1e-8
                # the clamp only binds in the degenerate corners
                assert abs(out.variance - var_o) < 1e-8 or out.variance == pytest.approx(
                    0.999 * v
                )

    def test_invalid_variance(self):
        with pytest.raises(ValueError):
            denoise_tweedie(GMM, np.zeros(4), 0.0)


class TestVarianceResidual:
    def test_exact_recovery_clamps_to_floor(self):
        op = make_operator(16, 32, "dct", seed=0)
        x = np.random.default_rng(0).standard_normal(32)
        model = sample_model(op, x, 0.0, seed=1)
        assert variance_residual(model, x) == VARIANCE_FLOOR

    def test_unbiased_under_independence(self):
        # independent Gaussian denoising error, full sampling
        n = 4096
        estimates = []
        for trial in range(20):
            rng = np.random.default_rng(100 + trial)
            op = make_operator(n, n, "hadamard", seed=trial)
            x = rng.standard_normal(n)
            model = sample_model(op, x, 0.25, seed=200 + trial)
            e = np.sqrt(0.09) * rng.standard_normal(n)
            estimates.append(variance_residual(model, x + e))
        assert abs(np.mean(estimates) - 0.09) / 0.09 < 0.05

    def test_negative_raw_value_clamped(self):
        op = make_operator(8, 16, "dct", seed=3)
        x = np.random.default_rng(3).standard_normal(16)
        # claim more noise than the residual can carry
        model = sample_model(op, x, 10.0, seed=4)
        assert variance_residual(model, x) == VARIANCE_FLOOR

    def test_degrades_when_estimate_correlates_with_noise(self):
        # x_post built from the observations themselves: the residual
        # vanishes while the true error stays at the noise level
        n = 1024
        rng = np.random.default_rng(9)
        op = make_operator(n, n, "hadamard", seed=9)
        x = rng.standard_normal(n)
        model = sample_model(op, x, 0.25, seed=10)
        x_post = adjoint(op, model.observations)  # exact inverse of A, error = noise
        true_mse = float(np.mean((x_post - x) ** 2))
        est = variance_residual(model, x_post)
        assert true_mse > 0.2  # the actual error is at the noise scale
        assert est < 0.1 * true_mse  # the estimator collapses


class TestVarianceDivergence:
    def test_linear_denoiser_exact_with_rademacher_probes(self):
        c = 0.37

        def denoiser(r, v):
            return DenoiserOutput(mean=c * r, variance=1e-3)

        r = np.random.default_rng(5).standard_normal(64)
        for k in (1, 4):
            cfg = DivergenceEstimatorConfig(probe_count=k, seed=5, probe_kind="rademacher")
            est = variance_divergence(denoiser, r, 0.8, cfg)
            assert abs(est - c * 0.8) < 1e-9

    def test_linear_denoiser_step_size_free(self):
        # no finite-difference error on a linear map: any step, same answer
        c = -0.8

        def denoiser(r, v):
            return DenoiserOutput(mean=c * r, variance=1e-3)

        r = np.random.default_rng(6).standard_normal(256)
        estimates = [
            variance_divergence(
                denoiser, r, 1.0, DivergenceEstimatorConfig(probe_count=2, probe_step=d, seed=7)
            )
            for d in (1e-6, 1e-3, 1.0)
        ]
        np.testing.assert_allclose(estimates, estimates[0], rtol=1e-9)

    def test_gaussian_tweedie_matches_analytic_jacobian(self):
        prior = GaussianPrior(0.0, 1.0)
        rng = np.random.default_rng(2)
        r = sample_prior(prior, 1024, rng) + rng.standard_normal(1024)
        cfg = DivergenceEstimatorConfig(probe_count=16, probe_step=1e-3, seed=11)
        est = variance_divergence(tweedie_denoiser(prior), r, 1.0, cfg)
        assert abs(est - 0.5) / 0.5 < 0.03

    def test_cross_estimator_agreement_on_gmm(self):
        rng = np.random.default_rng(4)
        v = 0.3
        r = sample_prior(GMM, 2048, rng) + np.sqrt(v) * rng.standard_normal(2048)
        out = denoise_tweedie(GMM, r, v)
        cfg = DivergenceEstimatorConfig(probe_count=32, seed=21)
        est = variance_divergence(tweedie_denoiser(GMM), r, v, cfg)
        assert abs(est - out.variance) / out.variance < 0.10

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DivergenceEstimatorConfig(probe_count=0)
        with pytest.raises(ValueError):
            DivergenceEstimatorConfig(probe_step=0.0)
