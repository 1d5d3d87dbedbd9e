"""Bound estimator vs the exactly solvable linear-Gaussian oracle.

The oracle identities (marginal, posterior) are themselves cross-checked
here against direct 1-D quadrature over the latent, so nothing in this file
trusts the code path it is checking.
"""

import numpy as np
import pytest

from elbo_kit.divergence import kl_gaussian_closed
from elbo_kit.elbo import (
    ElboBreakdown,
    FullGaussian,
    LinearGaussianModel,
    bound_gap,
    elbo_estimate,
    exact_log_marginal,
    exact_posterior,
    model_log_likelihood_fn,
    sample_observations,
)
from elbo_kit.gaussian_core import (
    DiagonalGaussian,
    RngState,
    log_pdf_batch,
    standard_normal,
)

LOG_MARGINAL_VAR2_AT_ZERO = -1.2655121234846454  # log N(0 | 0, 2) = -0.5 ln(4 pi)


def latent_grid(n=200_001, lo=-12.0, hi=12.0):
    return np.linspace(lo, hi, n)


def simpson_weights(n):
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w


def quad_over_latent(fn, n=200_001, lo=-12.0, hi=12.0):
    """Integral of fn(z) dz for scalar latent models (independent oracle)."""
    zs = latent_grid(n, lo, hi)
    return (hi - lo) / (n - 1) / 3.0 * np.sum(simpson_weights(n) * fn(zs))


def joint_density_1d(model, x, zs):
    """p(x|z) p(z) on a z-grid for a 1-D latent, 1-D data model."""
    a = model.weight[0, 0]
    b = model.bias[0]
    s2 = model.noise_variance
    lik = np.exp(-0.5 * np.log(2 * np.pi * s2) - (x - a * zs - b) ** 2 / (2 * s2))
    prior = np.exp(-0.5 * np.log(2 * np.pi) - zs**2 / 2)
    return lik * prior


def random_model(rng, latent_dim, data_dim):
    a = (2.0 * rng.uniforms(data_dim * latent_dim) - 1.0).reshape(data_dim, latent_dim)
    b = rng.uniforms(data_dim) - 0.5
    noise = 0.25 + float(rng.uniforms(1)[0])
    return LinearGaussianModel(weight=a, bias=b, noise_variance=noise)


class TestElboEstimate:
    def test_zero_kl_constant_likelihood(self):
        q = standard_normal(3)
        for L in (1, 7):
            out = elbo_estimate(q, q, lambda zs: np.full(len(np.atleast_2d(zs)), -2.5),
                                L, RngState(1))
            assert out.neg_kl_term == 0.0
            assert out.recon_term == -2.5
            assert out.elbo == -2.5
            assert out.n_recon_samples == L

    def test_breakdown_terms_sum_and_sign(self):
        rng = RngState(2)
        model = random_model(rng, 2, 3)
        x = sample_observations(model, 1, rng)[0]
        q = DiagonalGaussian([0.3, -0.1], [0.5, 2.0])
        out = elbo_estimate(q, standard_normal(2), model_log_likelihood_fn(model, x), 64, rng)
        assert out.elbo == out.neg_kl_term + out.recon_term
        assert out.neg_kl_term <= 0.0
        assert out.recon_std_error > 0.0

    def test_recon_term_converges_to_analytic_expectation(self):
        # E_q[log lik] of a linear-Gaussian likelihood is a quadratic form:
        # -D/2 log(2 pi s2) - (||x - A mu - b||^2 + sum_j v_j ||A_j||^2) / (2 s2)
        rng = RngState(3)
        model = random_model(rng, 2, 4)
        x = sample_observations(model, 1, rng)[0]
        q = DiagonalGaussian([0.4, -0.7], [0.6, 1.8])
        expected = -0.5 * model.data_dim * np.log(2 * np.pi * model.noise_variance)
        resid = x - model.weight @ q.mean - model.bias
        spread = float(q.variance @ np.sum(model.weight**2, axis=0))
        expected -= (float(resid @ resid) + spread) / (2 * model.noise_variance)
        out = elbo_estimate(
            q, standard_normal(2), model_log_likelihood_fn(model, x), 100_000, rng
        )
        assert abs(out.recon_term - expected) <= 4 * out.recon_std_error

    def test_frozen_seed_reproduces_breakdown(self):
        rng = RngState(4)
        model = random_model(rng, 1, 2)
        x = sample_observations(model, 1, rng)[0]
        q = DiagonalGaussian([0.2], [0.9])
        args = (q, standard_normal(1), model_log_likelihood_fn(model, x), 1)
        assert elbo_estimate(*args, RngState(42)) == elbo_estimate(*args, RngState(42))

    def test_single_sample_has_zero_std_error(self):
        q = standard_normal(1)
        out = elbo_estimate(q, q, lambda zs: -np.atleast_2d(zs)[:, 0] ** 2, 1, RngState(5))
        assert out.recon_std_error == 0.0

    def test_nonfinite_likelihood_identifies_draw(self):
        q = standard_normal(1)
        with pytest.raises(ValueError, match="draw"):
            elbo_estimate(
                q, q, lambda zs: np.full(len(np.atleast_2d(zs)), np.nan), 3, RngState(6)
            )

    def test_frozen_eps_overrides_rng(self):
        q = DiagonalGaussian([1.0], [4.0])
        eps = np.array([[0.0], [1.0]])
        out = elbo_estimate(
            q, standard_normal(1), lambda zs: np.atleast_2d(zs)[:, 0], 2, eps=eps
        )
        # draws are exactly mu and mu + sigma
        assert out.recon_term == pytest.approx((1.0 + 3.0) / 2, abs=1e-15)

    def test_one_integral_form_same_draws_bookkeeping_identity(self):
        # mean(ll + log prior - log q) must equal the two-term split with a
        # Monte Carlo KL on the same draws, up to float reordering
        rng = RngState(7)
        model = random_model(rng, 2, 3)
        x = sample_observations(model, 1, rng)[0]
        q = DiagonalGaussian([0.5, -0.2], [0.7, 1.4])
        prior = standard_normal(2)
        eps = RngState(8).normals(2 * 64).reshape(64, 2)
        zs = q.mean + q.std * eps
        ll = model_log_likelihood_fn(model, x)(zs)
        lq = log_pdf_batch(q, zs)
        lprior = log_pdf_batch(prior, zs)
        one_integral = float(np.mean(ll + lprior - lq))
        two_term_mc = -float(np.mean(lq - lprior)) + float(np.mean(ll))
        assert abs(one_integral - two_term_mc) <= 1e-10

    def test_equals_one_integral_exactly_when_q_is_prior(self):
        rng = RngState(9)
        model = random_model(rng, 2, 3)
        x = sample_observations(model, 1, rng)[0]
        prior = standard_normal(2)
        eps = RngState(10).normals(2 * 32).reshape(32, 2)
        out = elbo_estimate(prior, prior, model_log_likelihood_fn(model, x), 32, eps=eps)
        zs = prior.mean + prior.std * eps
        ll = model_log_likelihood_fn(model, x)(zs)
        lq = log_pdf_batch(prior, zs)
        lprior = log_pdf_batch(prior, zs)
        assert abs(out.elbo - float(np.mean(ll + lprior - lq))) <= 1e-10

    def test_closed_form_kl_consistent_with_sampled_kl(self):
        # the closed-form KL inside the bound differs from the same-draws
        # Monte Carlo KL only by sampling error
        rng = RngState(11)
        model = random_model(rng, 2, 3)
        x = sample_observations(model, 1, rng)[0]
        q = DiagonalGaussian([0.5, -0.2], [0.7, 1.4])
        prior = standard_normal(2)
        n = 20_000
        eps = RngState(12).normals(2 * n).reshape(n, 2)
        zs = q.mean + q.std * eps
        ll = model_log_likelihood_fn(model, x)(zs)
        lq = log_pdf_batch(q, zs)
        lprior = log_pdf_batch(prior, zs)
        out = elbo_estimate(q, prior, model_log_likelihood_fn(model, x), n, eps=eps)
        one_integral = float(np.mean(ll + lprior - lq))
        kl_mc_se = float(np.std(lq - lprior, ddof=1) / np.sqrt(n))
        assert abs(out.elbo - one_integral) <= 4 * kl_mc_se

    def test_recon_variance_scales_inversely_with_sample_count(self):
        rng = RngState(13)
        model = random_model(rng, 1, 2)
        x = sample_observations(model, 1, rng)[0]
        q = DiagonalGaussian([0.4], [1.3])
        fn = model_log_likelihood_fn(model, x)

        def recon_variance(L):
            vals = [
                elbo_estimate(q, standard_normal(1), fn, L, rng).recon_term
                for _ in range(100)
            ]
            return np.var(vals, ddof=1)

        ratio = recon_variance(10) / recon_variance(1000)
        assert 50.0 <= ratio <= 200.0


class TestExactLogMarginal:
    def test_zero_weight_collapses_to_prior_over_data(self):
        model = LinearGaussianModel(np.zeros((3, 2)), np.zeros(3), 1.0)
        x = np.array([0.3, -1.0, 0.7])
        expected = float(
            np.sum(-0.5 * np.log(2 * np.pi) - x**2 / 2)
        )
        assert exact_log_marginal(model, x) == pytest.approx(expected, abs=1e-12)

    def test_scalar_model_matches_quadrature_over_latent(self):
        model = LinearGaussianModel([[1.0]], [0.0], 1.0)
        assert exact_log_marginal(model, np.zeros(1)) == pytest.approx(
            LOG_MARGINAL_VAR2_AT_ZERO, abs=1e-12
        )
        # independent oracle: integrate p(x|z) p(z) dz numerically
        quad = np.log(quad_over_latent(lambda zs: joint_density_1d(model, 0.0, zs)))
        assert exact_log_marginal(model, np.zeros(1)) == pytest.approx(quad, abs=1e-10)

    def test_quadrature_agreement_random_scalar_models(self):
        rng = RngState(14)
        for _ in range(10):
            model = LinearGaussianModel(
                [[2.0 * rng.uniforms(1)[0] - 1.0]],
                [rng.uniforms(1)[0] - 0.5],
                0.3 + rng.uniforms(1)[0],
            )
            x = float(3.0 * rng.uniforms(1)[0] - 1.5)
            quad = np.log(quad_over_latent(lambda zs: joint_density_1d(model, x, zs)))
            assert exact_log_marginal(model, np.array([x])) == pytest.approx(quad, abs=1e-9)

    def test_invariant_under_latent_column_permutation(self):
        rng = RngState(15)
        a = rng.normals(12).reshape(4, 3)
        b = rng.normals(4)
        x = rng.normals(4)
        m1 = LinearGaussianModel(a, b, 0.8)
        m2 = LinearGaussianModel(a[:, [2, 0, 1]], b, 0.8)
        assert exact_log_marginal(m1, x) == pytest.approx(exact_log_marginal(m2, x), abs=1e-12)

    def test_dimension_cap_enforced(self):
        with pytest.raises(ValueError):
            LinearGaussianModel(np.zeros((17, 2)), np.zeros(17), 1.0)


class TestExactPosterior:
    def test_zero_weight_posterior_is_prior(self):
        model = LinearGaussianModel(np.zeros((2, 3)), np.zeros(2), 1.0)
        post = exact_posterior(model, np.array([1.0, -1.0]))
        np.testing.assert_allclose(post.mean, np.zeros(3), atol=1e-15)
        np.testing.assert_allclose(post.cov, np.eye(3), atol=1e-15)

    def test_scalar_conjugate_update(self):
        model = LinearGaussianModel([[1.0]], [0.0], 1.0)
        post = exact_posterior(model, np.array([2.0]))
        assert post.mean[0] == pytest.approx(1.0, abs=1e-12)
        assert post.cov[0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_scalar_posterior_matches_quadrature_moments(self):
        model = LinearGaussianModel([[0.8]], [0.2], 0.5)
        x = 1.3
        norm = quad_over_latent(lambda zs: joint_density_1d(model, x, zs))
        mean = quad_over_latent(lambda zs: zs * joint_density_1d(model, x, zs)) / norm
        second = quad_over_latent(lambda zs: zs**2 * joint_density_1d(model, x, zs)) / norm
        post = exact_posterior(model, np.array([x]))
        assert post.mean[0] == pytest.approx(mean, abs=1e-9)
        assert post.cov[0, 0] == pytest.approx(second - mean**2, abs=1e-9)

    def test_covariance_symmetric_positive_definite(self):
        rng = RngState(16)
        for _ in range(10):
            model = random_model(rng, 3, 5)
            x = sample_observations(model, 1, rng)[0]
            post = exact_posterior(model, x)
            np.testing.assert_allclose(post.cov, post.cov.T, atol=1e-14)
            assert np.all(np.linalg.eigvalsh(post.cov) > 0)

    def test_diagonal_extraction(self):
        g = FullGaussian(mean=np.array([1.0, 2.0]), cov=np.array([[0.5, 0.1], [0.1, 2.0]]))
        diag = g.diagonal()
        np.testing.assert_array_equal(diag.mean, [1.0, 2.0])
        np.testing.assert_array_equal(diag.variance, [0.5, 2.0])


class TestBoundGap:
    def test_gap_vanishes_at_exact_posterior(self):
        rng = RngState(17)
        model = LinearGaussianModel([[0.9]], [0.1], 0.7)
        x = sample_observations(model, 1, rng)[0]
        q = exact_posterior(model, x).diagonal()
        out = elbo_estimate(
            q, standard_normal(1), model_log_likelihood_fn(model, x), 100_000, rng
        )
        gap = exact_log_marginal(model, x) - out.elbo
        assert abs(gap) <= 4 * out.recon_std_error

    def test_prior_q_far_datum_positive_gap_matches_closed_form(self):
        model = LinearGaussianModel([[1.0]], [0.0], 0.5)
        x = np.array([4.0])
        q = standard_normal(1)
        rng = RngState(18)
        out = elbo_estimate(
            q, standard_normal(1), model_log_likelihood_fn(model, x), 50_000, rng
        )
        gap = exact_log_marginal(model, x) - out.elbo
        expected = kl_gaussian_closed(q, exact_posterior(model, x).diagonal())
        assert gap > 0.0
        assert abs(gap - expected) <= 4 * out.recon_std_error

    def test_gap_nonnegative_within_four_sigma_200_trials(self):
        rng = RngState(19)
        ok = 0
        for _ in range(200):
            model = random_model(rng, 1 + rng.integer_below(3), 1 + rng.integer_below(6))
            x = sample_observations(model, 1, rng)[0]
            j = model.latent_dim
            q = DiagonalGaussian(
                4.0 * rng.uniforms(j) - 2.0, 0.25 + 3.75 * rng.uniforms(j)
            )
            out = elbo_estimate(
                q, standard_normal(j), model_log_likelihood_fn(model, x), 10_000, rng
            )
            gap = exact_log_marginal(model, x) - out.elbo
            ok += gap >= -4 * out.recon_std_error
        assert ok >= 198

    def test_bound_gap_function_agrees_with_manual_computation(self):
        model = LinearGaussianModel([[0.5], [0.2]], [0.0, 0.1], 1.0)
        x = np.array([0.4, -0.3])
        q = DiagonalGaussian([0.1], [0.8])
        eps = RngState(20).normals(16).reshape(16, 1)
        gap = bound_gap(model, x, q, 16, eps=eps)
        out = elbo_estimate(
            q, standard_normal(1), model_log_likelihood_fn(model, x), 16, eps=eps
        )
        assert gap == exact_log_marginal(model, x) - out.elbo

    def test_elbo_inequality_100_random_models(self):
        rng = RngState(21)
        for _ in range(100):
            model = random_model(rng, 1 + rng.integer_below(3), 1 + rng.integer_below(6))
            x = sample_observations(model, 1, rng)[0]
            j = model.latent_dim
            q = DiagonalGaussian(
                4.0 * rng.uniforms(j) - 2.0, 0.25 + 3.75 * rng.uniforms(j)
            )
            out = elbo_estimate(
                q, standard_normal(j), model_log_likelihood_fn(model, x), 2_000, rng
            )
            assert exact_log_marginal(model, x) >= out.elbo - 4 * out.recon_std_error


class TestValidation:
    def test_elbo_breakdown_is_plain_data(self):
        bd = ElboBreakdown(-0.5, -2.0, -2.5, 4, 0.1)
        assert bd.elbo == -2.5

    def test_model_validation(self):
        with pytest.raises(ValueError):
            LinearGaussianModel(np.zeros((2, 2)), np.zeros(3), 1.0)
        with pytest.raises(ValueError):
            LinearGaussianModel(np.zeros((2, 2)), np.zeros(2), 0.0)

    def test_estimate_validation(self):
        q = standard_normal(1)
        with pytest.raises(ValueError):
            elbo_estimate(q, q, lambda z: 0.0, 0, RngState(1))
        with pytest.raises(ValueError):
            elbo_estimate(q, standard_normal(2), lambda z: 0.0, 1, RngState(1))
        with pytest.raises(ValueError):
            elbo_estimate(q, q, lambda z: 0.0, 1)  # no rng, no eps
