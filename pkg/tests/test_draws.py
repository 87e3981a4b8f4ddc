import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from occmc.draws import (SPDError, checked_cholesky, draw_bernoulli, draw_inverse_gamma,
                         draw_mvn, draw_pg, draw_pg_truncated, draw_uniform, pg_mean, pg_var,
                         rng_stream)


def series_moments(b, c, n_terms=200_000):
    """PG(b, c) mean and variance from the infinite sum-of-gammas representation."""
    k = np.arange(1, n_terms + 1, dtype=float)
    d = (k - 0.5) ** 2 + (c / (2 * math.pi)) ** 2
    mean = b * np.sum(1 / d) / (2 * math.pi**2)
    var = b * np.sum(1 / d**2) / (4 * math.pi**4)
    return mean, var


@pytest.mark.parametrize("b", [1, 2, 3])
@pytest.mark.parametrize("c", [0.0, 0.5, 1.0, 2.0, 5.0])
def test_closed_form_moments_match_series(b, c):
    m, v = series_moments(b, c)
    assert pg_mean(b, c) == pytest.approx(m, rel=1e-5)
    assert pg_var(b, c) == pytest.approx(v, rel=1e-5)


def test_pg_mean_at_zero_tilt():
    x = draw_pg(1, np.zeros(1_000_000), rng_stream(1))
    se = math.sqrt(1 / 24 / x.size)
    assert abs(x.mean() - 0.25) < 3 * se


def test_pg_mean_at_tilt_two():
    x = draw_pg(1, np.full(1_000_000, 2.0), rng_stream(2))
    target = 0.25 * math.tanh(1.0)
    assert target == pytest.approx(0.19040, abs=1e-5)
    assert abs(x.mean() - target) < 3 * math.sqrt(pg_var(1, 2.0) / x.size)


def test_pg_additivity():
    rng = rng_stream(3)
    n = 100_000
    three = draw_pg(3, np.full(n, 1.5), rng)
    summed = draw_pg(1, np.full((3, n), 1.5), rng).sum(axis=0)
    assert stats.ks_2samp(three, summed).pvalue > 0.01


def test_pg_matches_truncated_series_sampler():
    rng = rng_stream(4)
    exact = draw_pg(1, np.full(50_000, 0.7), rng)
    approx = draw_pg_truncated(1, np.full(50_000, 0.7), rng, n_terms=2000)
    assert stats.ks_2samp(exact, approx).pvalue > 0.01


def test_pg_symmetric_in_tilt():
    a = draw_pg(1, np.full(50_000, -3.0), rng_stream(5))
    b = draw_pg(1, np.full(50_000, 3.0), rng_stream(6))
    assert stats.ks_2samp(a, b).pvalue > 0.01


@pytest.mark.parametrize("b,c", [(0, 1.0), (1.5, 1.0), (1, np.nan), (1, np.inf)])
def test_pg_rejects_bad_arguments(b, c):
    with pytest.raises(ValueError):
        draw_pg(b, c, rng_stream(0))


@settings(max_examples=30, deadline=None)
@given(st.floats(-40, 40), st.integers(1, 4))
def test_pg_draws_positive_finite(c, b):
    x = draw_pg(b, np.full(20, c), rng_stream(7))
    assert np.all(np.isfinite(x)) and np.all(x > 0)


def test_pg_scalar_in_scalar_out():
    assert isinstance(draw_pg(1, 0.3, rng_stream(0)), float)


def test_streams_reproducible_and_distinct():
    a = rng_stream(9, 0, 0).random(5)
    assert np.array_equal(a, rng_stream(9, 0, 0).random(5))
    assert not np.array_equal(a, rng_stream(9, 1, 0).random(5))
    assert not np.array_equal(a, rng_stream(9, 0, 1).random(5))


def test_mvn_identity_covariance():
    rng = rng_stream(10)
    x = np.array([draw_mvn(np.zeros(2), np.eye(2), rng) for _ in range(100_000)])
    assert np.abs(np.cov(x.T) - np.eye(2)).max() < 0.02


def test_mvn_precision_form():
    rng = rng_stream(11)
    x = np.array([draw_mvn(np.zeros(3), 4 * np.eye(3), rng, precision=True)
                  for _ in range(40_000)])
    np.testing.assert_allclose(x.var(axis=0), 0.25, atol=0.01)


def test_mvn_correlated_precision():
    Q = np.array([[2.0, 0.6], [0.6, 1.0]])
    rng = rng_stream(12)
    x = np.array([draw_mvn(np.ones(2), Q, rng, precision=True) for _ in range(60_000)])
    np.testing.assert_allclose(np.cov(x.T), np.linalg.inv(Q), atol=0.02)
    np.testing.assert_allclose(x.mean(axis=0), 1.0, atol=0.02)


def test_nearly_singular_matrix_rejected():
    a = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]])
    with pytest.raises(SPDError):
        checked_cholesky(a)
    with pytest.raises(SPDError):
        draw_mvn(np.zeros(2), a, rng_stream(0))


def test_indefinite_matrix_rejected():
    with pytest.raises(SPDError):
        checked_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_inverse_gamma_mean():
    x = draw_inverse_gamma(3.0, 2.0, rng_stream(13), size=1_000_000)
    sd = math.sqrt(2.0**2 / (2**2 * 1))    # scale^2 / ((a-1)^2 (a-2))
    assert abs(x.mean() - 1.0) < 3 * sd / math.sqrt(x.size)


def test_inverse_gamma_distribution():
    x = draw_inverse_gamma(2.5, 1.5, rng_stream(14), size=20_000)
    assert stats.kstest(x, stats.invgamma(2.5, scale=1.5).cdf).pvalue > 0.01


@pytest.mark.parametrize("shape,scale", [(0, 1), (1, 0), (-1, 1)])
def test_inverse_gamma_rejects(shape, scale):
    with pytest.raises(ValueError):
        draw_inverse_gamma(shape, scale, rng_stream(0))


def test_bernoulli_edges():
    rng = rng_stream(15)
    assert np.all(draw_bernoulli(np.zeros(1000), rng) == 0)
    assert np.all(draw_bernoulli(np.ones(1000), rng) == 1)
    with pytest.raises(ValueError):
        draw_bernoulli(1.2, rng)


def test_uniform_bounds():
    x = draw_uniform(2.0, 3.0, rng_stream(16), size=1000)
    assert x.min() >= 2.0 and x.max() < 3.0
    with pytest.raises(ValueError):
        draw_uniform(1.0, 1.0, rng_stream(0))
