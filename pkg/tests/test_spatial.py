import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from occmc.draws import SPDError, rng_stream
from occmc.spatial import (KernelParams, DenseProcess, NNGPProcess, build_neighbor_graph,
                           build_neighbor_graph_brute, correlation, dense_covariance,
                           jittered_cholesky, nngp_factors, nngp_logdensity,
                           sample_w_sequential)

KERNELS = ["exponential", "spherical", "gaussian", "matern"]
JIT = 1e-8


def coords_uniform(J, seed):
    return np.random.default_rng(seed).uniform(0, 1, size=(J, 2))


@pytest.mark.parametrize("kernel", KERNELS)
def test_correlation_one_at_zero(kernel):
    assert correlation(kernel, 3.0, 1.5, 0.0) == 1.0


def test_exponential_value():
    assert correlation("exponential", 5.0, None, 3 / 5) == pytest.approx(math.exp(-3), abs=1e-12)
    assert math.exp(-3) == pytest.approx(0.049787, abs=1e-6)


@pytest.mark.parametrize("d", [0.1, 1.0, 10.0])
def test_matern_half_is_exponential(d):
    assert correlation("matern", 0.7, 0.5, d) == pytest.approx(math.exp(-0.7 * d), abs=1e-10)


def test_matern_three_halves_closed_form():
    d = np.linspace(0.01, 3, 50)
    x = 2.0 * d
    np.testing.assert_allclose(correlation("matern", 2.0, 1.5, d), (1 + x) * np.exp(-x), atol=1e-10)


def test_spherical_compact_support():
    assert correlation("spherical", 2.0, None, 0.5) == 0.0
    assert correlation("spherical", 2.0, None, 0.7) == 0.0
    assert correlation("spherical", 2.0, None, 0.25) == pytest.approx(1 - 0.75 + 0.0625)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(KERNELS), st.floats(0.1, 30), st.floats(0.2, 2.5),
       st.lists(st.floats(0, 5), min_size=2, max_size=10))
def test_correlation_in_unit_interval_and_monotone(kernel, phi, nu, ds):
    ds = np.sort(np.asarray(ds))
    r = correlation(kernel, phi, nu, ds)
    assert np.all((r >= 0) & (r <= 1))
    assert np.all(np.diff(r) <= 1e-12)


def test_bad_kernel_arguments():
    with pytest.raises(ValueError):
        correlation("cubic", 1.0, None, 1.0)
    with pytest.raises(ValueError):
        correlation("matern", 1.0, 3.0, 1.0)
    with pytest.raises(ValueError):
        correlation("exponential", 1.0, None, -1.0)
    with pytest.raises(ValueError):
        KernelParams(0.0, 1.0)


def test_dense_covariance_small_cases():
    c = dense_covariance(np.zeros((1, 2)), "exponential", KernelParams(2.5, 1.0))
    np.testing.assert_allclose(c, [[2.5]])
    c = dense_covariance(np.array([[0, 0], [0.3, 0.4]]), "exponential", KernelParams(2.0, 3.0))
    assert c[0, 1] == pytest.approx(2.0 * math.exp(-1.5))


@pytest.mark.parametrize("kernel", KERNELS)
def test_dense_covariance_psd(kernel):
    c = dense_covariance(coords_uniform(40, 1), kernel, KernelParams(1.3, 4.0, 1.2))
    np.testing.assert_allclose(c, c.T)
    assert np.linalg.eigvalsh(c).min() > -1e-8


def test_jittered_cholesky_rejects_indefinite():
    with pytest.raises(SPDError):
        jittered_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_neighbor_graph_collinear():
    g = build_neighbor_graph(np.array([[0.0, 0], [1.0, 0], [2.0, 0]]), 1)
    assert list(g.neighbors_of(0)) == []
    assert list(g.neighbors_of(1)) == [0]
    assert list(g.neighbors_of(2)) == [1]


def test_neighbor_graph_rejects_zero_m():
    with pytest.raises(ValueError):
        build_neighbor_graph(coords_uniform(5, 0), 0)


def test_full_neighbor_sets_are_all_predecessors():
    c = coords_uniform(30, 2)
    g = build_neighbor_graph(c, 40)
    rank = np.empty(30, int)
    rank[g.order] = np.arange(30)
    for j in range(30):
        assert set(g.neighbors_of(j)) == set(np.flatnonzero(rank < rank[j]))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 120), st.integers(1, 12), st.integers(0, 10_000), st.booleans())
def test_kdtree_graph_matches_brute_force(J, m, seed, grid):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0, 1, (J, 2))
    if grid:
        c = np.round(c * 4) / 4  # many ties and duplicates
    a, b = build_neighbor_graph(c, m), build_neighbor_graph_brute(c, m)
    np.testing.assert_array_equal(a.neighbors, b.neighbors)
    np.testing.assert_array_equal(a.order, b.order)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 80), st.integers(1, 10), st.integers(0, 10_000))
def test_graph_invariants(J, m, seed):
    g = build_neighbor_graph(coords_uniform(J, seed), m)
    rank = np.empty(J, int)
    rank[g.order] = np.arange(J)
    for j in range(J):
        nb = g.neighbors_of(j)
        assert len(nb) == min(m, rank[j])
        assert np.all(rank[nb] < rank[j])   # acyclic: neighbors precede
        for c in g.children(j):
            assert j in g.neighbors_of(c)


def test_first_site_and_two_site_factors():
    c = np.array([[0.0, 0.0], [0.5, 0.0]])
    g = build_neighbor_graph(c, 1)
    f = nngp_factors(g, "exponential", KernelParams(2.0, 3.0))
    first, second = g.order
    assert f.F[first] == pytest.approx(2.0, rel=1e-7)
    rho = math.exp(-1.5)
    assert f.B[second, 0] == pytest.approx(rho, rel=1e-7)
    assert f.F[second] == pytest.approx(2.0 * (1 - rho**2), rel=1e-6)


@pytest.mark.parametrize("kernel,tol", [("exponential", 1e-8), ("spherical", 1e-8),
                                        ("matern", 1e-8)])
def test_nngp_full_neighbors_equals_dense(kernel, tol):
    J = 50
    c = coords_uniform(J, 3)
    p = KernelParams(1.7, 4.0, 1.1)
    cov = dense_covariance(c, kernel, p) + JIT * p.sigma2 * np.eye(J)
    w = np.random.default_rng(4).multivariate_normal(np.zeros(J), cov)
    dense = stats.multivariate_normal(np.zeros(J), cov).logpdf(w)
    g = build_neighbor_graph(c, J - 1)
    assert nngp_logdensity(w, g, nngp_factors(g, kernel, p)) == pytest.approx(dense, abs=tol)


def test_nngp_implied_covariance_equals_dense():
    J = 50
    c = coords_uniform(J, 5)
    p = KernelParams(1.0, 6.0)
    g = build_neighbor_graph(c, J - 1)
    f = nngp_factors(g, "exponential", p)
    # w = (I - B)^{-1} e with e ~ N(0, diag F)
    A = np.eye(J)
    for j in range(J):
        nb = g.neighbors_of(j)
        A[j, nb] -= f.B[j, : len(nb)]
    Ainv = np.linalg.inv(A)
    implied = Ainv @ np.diag(f.F) @ Ainv.T
    dense = dense_covariance(c, "exponential", p) + JIT * np.eye(J)
    np.testing.assert_allclose(implied, dense, atol=1e-8)


def test_process_logdensity_dense_vs_nngp():
    J = 40
    c = coords_uniform(J, 6)
    w = np.random.default_rng(0).standard_normal(J)
    d = DenseProcess(c, "exponential", 5.0)
    n = NNGPProcess(build_neighbor_graph(c, J - 1), "exponential", 5.0)
    assert n.logdensity(w, 1.5) == pytest.approx(d.logdensity(w, 1.5), abs=1e-8)


def test_isolated_site_conditional_is_prior():
    # single site: no neighbors, no children, no data
    g = build_neighbor_graph(np.zeros((1, 2)), 1)
    f = nngp_factors(g, "exponential", KernelParams(2.0, 1.0))
    rng = rng_stream(1)
    x = np.array([sample_w_sequential(np.zeros(1), g, f, np.zeros(1), np.zeros(1), rng)[0]
                  for _ in range(20_000)])
    assert stats.kstest(x, stats.norm(0, math.sqrt(2.0)).cdf).pvalue > 0.01


@pytest.mark.parametrize("cls,n_unobserved", [("nngp", 0), ("dense", 0), ("dense", 4)])
def test_w_sampler_matches_dense_conditional(cls, n_unobserved):
    J = 20
    c = coords_uniform(J, 7)
    sigma2 = 1.5
    rng = np.random.default_rng(8)
    data_prec = rng.uniform(0.1, 0.3, J)
    data_prec[:n_unobserved] = 0.0
    data_lin = rng.normal(0, 0.3, J)
    R = correlation("exponential", 3.0, None, np.linalg.norm(c[:, None] - c[None], axis=-1))
    Q = np.linalg.inv(sigma2 * (R + JIT * np.eye(J))) + np.diag(data_prec)
    cov = np.linalg.inv(Q)
    mean = cov @ data_lin
    proc = (NNGPProcess(build_neighbor_graph(c, J - 1), "exponential", 3.0) if cls == "nngp"
            else DenseProcess(c, "exponential", 3.0))
    g = rng_stream(9)
    w = np.zeros(J)
    n = 30_000
    draws = np.empty((n, J))
    for t in range(n + 200):
        proc.sample_w(w, sigma2, data_prec, data_lin, g)
        if t >= 200:
            draws[t - 200] = w
    # thinned by 10 for a rough effective-sample-size-aware tolerance
    se = np.sqrt(np.diag(cov) / (n / 10))
    assert np.all(np.abs(draws.mean(0) - mean) < 4 * se)
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.08)


def test_prior_draws_have_model_covariance():
    J = 6
    c = coords_uniform(J, 10)
    proc = NNGPProcess(build_neighbor_graph(c, J - 1), "matern", 4.0, 1.5)
    rng = rng_stream(11)
    x = np.array([proc.draw_prior(2.0, rng) for _ in range(40_000)])
    target = dense_covariance(c, "matern", KernelParams(2.0, 4.0, 1.5))
    np.testing.assert_allclose(np.cov(x.T), target, atol=0.06)


@pytest.mark.slow
def test_w_pass_linear_in_sites():
    # sizes are timed alternately so machine load drifts affect both alike
    runs = []
    for J in (20_000, 40_000):
        proc = NNGPProcess(build_neighbor_graph(coords_uniform(J, 12), 15), "exponential", 5.0)
        runs.append((proc, np.zeros(J), np.full(J, 0.2), np.zeros(J)))
    rng = rng_stream(0)
    times = [[], []]
    for _ in range(30):
        for k, (proc, w, prec, lin) in enumerate(runs):
            t = time.perf_counter()
            proc.sample_w(w, 1.0, prec, lin, rng)
            times[k].append(time.perf_counter() - t)
    ratio = min(times[1]) / min(times[0])
    assert 1.6 <= ratio <= 2.6
