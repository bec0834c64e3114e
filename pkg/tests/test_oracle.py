"""
Tests for the exact posterior oracle and the analytic covariance formulas
"""
import math

import numpy as np
import pytest
from scipy.special import logsumexp

from db import DatasetStore, SyntheticSpec, generate
from diffusion.oracle import (
    Target, exact_posterior, exact_posterior_mean, exact_score, log_marginal,
    optimal_denoiser_check, posterior_variance_diag, snis_covariance_diag,
    uniform_log_probs, uniform_trace,
)
from errors import ArgumentError, DimensionError, DomainError, UnsupportedProposalError


ZERO = np.array([0.0])


class TestPosterior:

    def test_symmetric_pair(self, edm, pair):
        for t in (0.1, 1.0, 7.0):
            np.testing.assert_allclose(exact_posterior(pair, edm, ZERO, t).probs, [0.5, 0.5], atol=1e-12)

    def test_hand_value(self, edm, zero_two):
        probs = exact_posterior(zero_two, edm, ZERO, 1.0).probs
        np.testing.assert_allclose(probs, [0.88080, 0.11920], atol=1e-5)

    def test_single_atom(self, edm):
        data = DatasetStore.from_array([[3.0, -1.0]])
        np.testing.assert_array_equal(exact_posterior(data, edm, np.zeros(2), 0.01).probs, [1.0])

    def test_normalized(self, edm, gmm256, rng):
        for t in (1e-3, 0.05, 1.0, 50.0):
            z = rng.standard_normal(gmm256.dim)
            log_probs = exact_posterior(gmm256, edm, z, t).log_probs
            assert abs(float(logsumexp(log_probs))) < 1e-12

    def test_no_underflow_at_tiny_t(self, edm, gmm256):
        z = gmm256.points[5] + 1e-3
        posterior = exact_posterior(gmm256, edm, z, 1e-4)
        assert not np.any(np.isnan(posterior.log_probs))
        assert posterior.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.argmax(posterior.probs) == 5

    def test_concentration(self, edm, gmm64):
        gap = gmm64.min_gap()
        z = gmm64.points[9] + 0.01 * gap
        probs = exact_posterior(gmm64, edm, z, gap / 20).probs
        assert probs[9] > 1 - 1e-12

    def test_errors(self, edm, pair):
        with pytest.raises(DomainError):
            exact_posterior(pair, edm, ZERO, 0.0)
        with pytest.raises(DimensionError):
            exact_posterior(pair, edm, np.zeros(2), 1.0)


class TestPosteriorMean:

    def test_symmetric_pair(self, edm, pair):
        assert exact_posterior_mean(pair, edm, ZERO, 1.0)[0] == pytest.approx(0.0, abs=1e-15)

    def test_hand_value(self, edm, zero_two):
        assert exact_posterior_mean(zero_two, edm, ZERO, 1.0)[0] == pytest.approx(0.23840, abs=1e-4)

    def test_large_t_limit(self, edm, gmm64):
        t = 1e3 * gmm64.diameter()
        z = np.full(gmm64.dim, 0.5)
        mean = exact_posterior_mean(gmm64, edm, z, t)
        np.testing.assert_allclose(mean, gmm64.mean(), rtol=1e-3, atol=1e-3 * np.abs(gmm64.points).max())

    def test_convex_hull(self, vp, gmm256, rng):
        low, high = gmm256.points.min(axis=0), gmm256.points.max(axis=0)
        for t in (0.01, 0.2, 0.9):
            mean = exact_posterior_mean(gmm256, vp, 3.0 * rng.standard_normal(gmm256.dim), t)
            assert np.all(mean >= low - 1e-12)
            assert np.all(mean <= high + 1e-12)


class TestScore:

    def test_single_atom(self, edm):
        data = DatasetStore.from_array([[1.0, 2.0]])
        z = np.array([0.0, 0.0])
        np.testing.assert_allclose(exact_score(data, edm, z, 2.0), np.array([1.0, 2.0]) / 4.0)

    def test_fixed_point(self, edm):
        data = DatasetStore.from_array([[0.7, -0.2]])
        np.testing.assert_allclose(exact_score(data, edm, data.points[0], 0.4), [0.0, 0.0], atol=1e-15)

    def test_gradient_of_log_marginal(self, edm):
        data = generate(SyntheticSpec(n=10, dim=2, components=3, seed=21))
        rng = np.random.default_rng(4)
        for _ in range(10):
            t = float(rng.uniform(0.5, 2.0))
            z = rng.standard_normal(2)
            analytic = exact_score(data, edm, z, t)
            h = 1e-5
            for j in range(2):
                up, down = z.copy(), z.copy()
                up[j] += h
                down[j] -= h
                fd = (log_marginal(data, edm, up, t) - log_marginal(data, edm, down, t)) / (2 * h)
                assert fd == pytest.approx(analytic[j], rel=1e-5, abs=1e-7)


class TestSnisCovariance:

    def test_concentrated_posterior(self, edm, zero_two):
        # log-lik gap at t = 0.01 is 2e4, far below float64 underflow
        diag = snis_covariance_diag(zero_two, edm, ZERO, 0.01, uniform_log_probs(zero_two), 4)
        np.testing.assert_array_equal(diag, [0.0])

    def test_uniform_pair(self, edm, pair):
        diag = snis_covariance_diag(pair, edm, ZERO, 1.0, uniform_log_probs(pair), 1)
        assert diag[0] == pytest.approx(1.0, abs=1e-12)

    def test_posterior_proposal(self, edm, gmm64, rng):
        z = rng.standard_normal(gmm64.dim) * 0.5
        t = 0.4
        log_p = exact_posterior(gmm64, edm, z, t).log_probs
        diag = snis_covariance_diag(gmm64, edm, z, t, log_p, 8)
        np.testing.assert_allclose(diag, posterior_variance_diag(gmm64, edm, z, t) / 8, rtol=1e-10)

    def test_score_target(self, edm, pair):
        mean = snis_covariance_diag(pair, edm, ZERO, 2.0, uniform_log_probs(pair), 3)
        score = snis_covariance_diag(pair, edm, ZERO, 2.0, uniform_log_probs(pair), 3, target=Target.SCORE)
        np.testing.assert_allclose(score, mean / 16.0, rtol=1e-12)

    def test_unnormalized_proposal(self, edm, pair):
        with pytest.raises(ArgumentError):
            snis_covariance_diag(pair, edm, ZERO, 1.0, np.zeros(2), 1)

    def test_unsupported_proposal(self, edm, pair):
        log_q = np.array([0.0, -math.inf])
        with pytest.raises(UnsupportedProposalError):
            snis_covariance_diag(pair, edm, ZERO, 1.0, log_q, 1)

    def test_bad_n(self, edm, pair):
        with pytest.raises(ArgumentError):
            snis_covariance_diag(pair, edm, ZERO, 1.0, uniform_log_probs(pair), 0)


class TestUniformTrace:

    def test_pair(self, edm, pair):
        assert uniform_trace(pair, edm, ZERO, 1.0, 1) == pytest.approx(1.0, abs=1e-12)

    def test_concentrated(self, edm, zero_two):
        assert uniform_trace(zero_two, edm, ZERO, 0.01, 1) == 0.0

    def test_matches_diagonal_sum(self, edm, gmm64, rng):
        # uniform_trace is the trace of the uniform-proposal covariance
        for _ in range(50):
            z = rng.standard_normal(gmm64.dim)
            t = float(np.exp(rng.uniform(np.log(0.05), np.log(5.0))))
            n = int(rng.integers(1, 64))
            diag = snis_covariance_diag(gmm64, edm, z, t, uniform_log_probs(gmm64), n)
            assert uniform_trace(gmm64, edm, z, t, n) == pytest.approx(float(diag.sum()), rel=1e-9, abs=1e-300)


class TestOptimalDenoiser:

    def test_mean_is_minimum(self, edm, gmm64, rng):
        z = rng.standard_normal(gmm64.dim)
        t = 0.5
        mu = exact_posterior_mean(gmm64, edm, z, t)
        best = optimal_denoiser_check(gmm64, edm, z, t, mu)
        for _ in range(100):
            v = 0.1 * rng.standard_normal(gmm64.dim)
            value = optimal_denoiser_check(gmm64, edm, z, t, mu + v)
            assert value >= best
            assert value - best == pytest.approx(float(v @ v), rel=1e-8)

    def test_dimension_mismatch(self, edm, pair):
        with pytest.raises(DimensionError):
            optimal_denoiser_check(pair, edm, ZERO, 1.0, np.zeros(3))
