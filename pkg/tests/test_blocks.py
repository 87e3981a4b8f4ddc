import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.special import expit

from occmc.data import ModelSpec, PriorSpec, make_dataset
from occmc.draws import draw_pg, rng_stream
from occmc.samplers import fit
from occmc.samplers.blocks import (AdaptiveStep, log_uniform, metropolis_accept,
                                   occupancy_probability, shift_intercept, update_coefficients,
                                   update_community,
                                   update_pg_weights, update_random_effects, update_sigma2,
                                   update_spatial_theta, update_variance, update_z)
from occmc.simulate import SpatialSim, sim_occ
from occmc.spatial import DenseProcess, NNGPProcess, build_neighbor_graph


def test_coefficients_without_rows_follow_prior():
    rng = rng_stream(1)
    x = np.array([update_coefficients(np.zeros((0, 2)), np.zeros(0), np.zeros(0),
                                      [1.0, -1.0], [4.0, 0.25], rng) for _ in range(20_000)])
    assert stats.kstest(x[:, 0], stats.norm(1, 2).cdf).pvalue > 0.01
    assert stats.kstest(x[:, 1], stats.norm(-1, 0.5).cdf).pvalue > 0.01


def test_single_coefficient_posterior():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 1))
    omega = rng.uniform(0.1, 0.3, 40)
    kappa = rng.choice([-0.5, 0.5], 40)
    s0 = 2.0
    prec = np.sum(omega * x[:, 0] ** 2) + 1 / s0
    mean = np.sum(kappa * x[:, 0]) / prec
    g = rng_stream(2)
    d = np.array([update_coefficients(x, kappa, omega, 0.0, s0, g)[0] for _ in range(40_000)])
    assert stats.kstest(d, stats.norm(mean, 1 / math.sqrt(prec)).cdf).pvalue > 0.01


def test_offset_shifts_linear_term():
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(30), rng.normal(size=30)])
    omega = rng.uniform(0.1, 0.3, 30)
    kappa = rng.choice([-0.5, 0.5], 30)
    off = rng.normal(size=30)
    a = update_coefficients(X, kappa, omega, 0, 2.72, rng_stream(3), offset=off)
    b = update_coefficients(X, kappa - omega * off, omega, 0, 2.72, rng_stream(3))
    np.testing.assert_allclose(a, b)


def test_occupancy_probability_formula():
    assert occupancy_probability(0.5, math.log(0.5), False) == pytest.approx(1 / 3)
    assert occupancy_probability(0.2, -3.0, True) == 1.0
    assert occupancy_probability(0.3, 0.0, False) == pytest.approx(0.3)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(1, 5), st.integers(0, 1000))
def test_detections_force_occupancy(J, K, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, (J, K))
    mask = rng.random((J, K)) < 0.7
    z = update_z(rng.random(J), rng.random((J, K)), y, mask, rng_stream(seed))
    assert np.all(z[(np.where(mask, y, 0) > 0).any(1)] == 1)


def test_unsurveyed_site_draws_from_psi():
    z = np.array([update_z(np.array([0.3]), np.array([[0.9]]), np.array([[0]]),
                           np.array([[False]]), rng) for rng in [rng_stream(4)]
                  for _ in range(1)])
    assert z.shape == (1, 1)
    rng = rng_stream(5)
    draws = np.concatenate([update_z(np.full(1000, 0.3), np.full((1000, 2), 0.9),
                                     np.zeros((1000, 2)), np.zeros((1000, 2), bool), rng)
                            for _ in range(20)])
    assert abs(draws.mean() - 0.3) < 4 * math.sqrt(0.21 / draws.size)


def test_pg_weights_zero_tilt_mean():
    w = update_pg_weights(np.zeros(400_000), rng_stream(6))
    assert abs(w.mean() - 0.25) < 3 * math.sqrt(1 / 24 / w.size)


def test_pg_weights_masked_cells_untouched():
    eta = np.array([[0.1, 2.0], [-1.0, 0.5]])
    active = np.array([[True, False], [False, True]])
    w = update_pg_weights(eta, rng_stream(7), active)
    assert np.isnan(w[~active]).all() and np.all(w[active] > 0)


def test_pg_weights_match_scalar_sampler():
    c = np.full(50_000, 1.7)
    a = update_pg_weights(c, rng_stream(8))
    b = draw_pg(1, c, rng_stream(9))
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_variance_update_with_zero_values():
    rng = rng_stream(10)
    x = np.array([update_variance(np.zeros(8), 2.0, 1.0, rng) for _ in range(20_000)])
    assert stats.kstest(x, stats.invgamma(2.0 + 4, scale=1.0).cdf).pvalue > 0.01


def test_sigma2_update_with_zero_w():
    J = 25
    proc = NNGPProcess(build_neighbor_graph(np.random.default_rng(0).random((J, 2)), 5),
                       "exponential", 3.0)
    rng = rng_stream(11)
    x = np.array([update_sigma2(proc, np.zeros(J), 2.0, 1.0, rng) for _ in range(20_000)])
    assert stats.kstest(x, stats.invgamma(2.0 + J / 2, scale=1.0).cdf).pvalue > 0.01


def test_proposal_outside_support_rejected():
    assert log_uniform(5.0, 1.0, 4.0) == -math.inf
    assert log_uniform(2.0, 1.0, 4.0) == pytest.approx(-math.log(3))
    assert not metropolis_accept(-math.inf, -1e300, 1e-300)
    assert metropolis_accept(0.0, 0.0, 0.5)


def test_adaptive_step_moves_toward_target():
    s = AdaptiveStep()
    start = s.scale
    for _ in range(250):
        s.record(True, adapt=True)
    assert s.scale > start
    frozen = s.scale
    for _ in range(250):
        s.record(False, adapt=False)
    assert s.scale == frozen
    assert s.acceptance == pytest.approx(0.5)


def test_community_single_species():
    rng = rng_stream(12)
    mus = np.array([update_community(np.array([[1.3]]), 0.0, 1e6, 2.0, 1.0, np.array([0.05]),
                                     rng)[0][0] for _ in range(4000)])
    assert abs(mus.mean() - 1.3) < 0.02


def test_community_identical_species():
    rng = rng_stream(13)
    coefs = np.full((2000, 2), 0.7)
    mu, tau2 = np.array([0.7, 0.7]), np.array([1.0, 1.0])
    for _ in range(30):
        mu, tau2 = update_community(coefs, 0.0, 2.72, 2.0, 1.0, tau2, rng)
    np.testing.assert_allclose(mu, 0.7, atol=0.01)
    assert np.all(tau2 < 0.01)


def test_community_conjugate_moments():
    coefs = np.random.default_rng(14).normal(0.5, 1.2, size=(12, 1))
    tau2, m0, v0, a, b = np.array([1.5]), 0.2, 2.72, 2.0, 1.0
    prec = 12 / tau2[0] + 1 / v0
    mean = (coefs.sum() / tau2[0] + m0 / v0) / prec
    rng = rng_stream(15)
    mus, pit = [], []
    for _ in range(20_000):
        mu, t2 = update_community(coefs, m0, v0, a, b, tau2, rng)
        mus.append(mu[0])
        ss = ((coefs[:, 0] - mu[0]) ** 2).sum()
        pit.append(stats.invgamma(a + 6, scale=b + ss / 2).cdf(t2[0]))
    assert stats.kstest(mus, stats.norm(mean, 1 / math.sqrt(prec)).cdf).pvalue > 0.01
    assert stats.kstest(pit, "uniform").pvalue > 0.01


def test_single_level_effect_is_extra_intercept():
    rng = np.random.default_rng(16)
    n = 30
    omega = rng.uniform(0.1, 0.3, n)
    kappa = rng.choice([-0.5, 0.5], n)
    off = rng.normal(size=n)
    g1, g2 = rng_stream(17), rng_stream(18)
    a = [update_random_effects(np.zeros(n, int), 1, omega, kappa, off, 1.7, g1)[0]
         for _ in range(20_000)]
    b = [update_coefficients(np.ones((n, 1)), kappa, omega, 0.0, 1.7, g2, offset=off)[0]
         for _ in range(20_000)]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_empty_level_draws_from_prior():
    rng = rng_stream(19)
    x = np.array([update_random_effects(np.zeros(3, int), 2, np.full(3, 0.2), np.zeros(3),
                                        np.zeros(3), 2.0, rng)[1] for _ in range(20_000)])
    assert stats.kstest(x, stats.norm(0, math.sqrt(2)).cdf).pvalue > 0.01


@pytest.mark.parametrize("kind", ["nngp", "dense"])
def test_intercept_shift_matches_quadrature(kind):
    J, sigma2, b0, m0, v0 = 8, 1.3, 0.4, -0.2, 2.0
    coords = np.random.default_rng(24).random((J, 2))
    proc = (NNGPProcess(build_neighbor_graph(coords, J - 1), "exponential", 4.0)
            if kind == "nngp" else DenseProcess(coords, "exponential", 4.0))
    w = np.random.default_rng(25).normal(size=J)
    Rinv = np.linalg.inv(np.exp(-4.0 * np.linalg.norm(coords[:, None] - coords[None], axis=-1))
                         + 1e-8 * np.eye(J))
    d = np.linspace(-8, 8, 20_001)
    u = w[None, :] - d[:, None]
    logp = -(b0 + d - m0) ** 2 / (2 * v0) - np.einsum("ij,jk,ik->i", u, Rinv, u) / (2 * sigma2)
    dens = np.exp(logp - logp.max())
    dens /= dens.sum()
    mean = (dens * d).sum()
    sd = math.sqrt((dens * (d - mean) ** 2).sum())
    rng = rng_stream(26)
    shifts = []
    for _ in range(20_000):
        ww = w.copy()
        nb = shift_intercept(b0, ww, proc, sigma2, m0, v0, rng)
        np.testing.assert_allclose(ww + nb, w + b0)
        shifts.append(nb - b0)
    assert stats.kstest(shifts, stats.norm(mean, sd).cdf).pvalue > 0.01


@pytest.mark.slow
def test_decay_interval_covers_truth():
    J, hits, reps = 400, 0, 25
    coords = np.random.default_rng(20).random((J, 2))
    graph = build_neighbor_graph(coords, 15)
    priors = PriorSpec()
    bounds = priors.phi_bounds(coords)
    for r in range(reps):
        rng = rng_stream(21, r)
        w = NNGPProcess(graph, "exponential", 5.0).draw_prior(2.0, rng)
        proc = NNGPProcess(graph, "exponential", float(np.mean(bounds)))
        sigma2, steps, trace = 1.0, {"phi": AdaptiveStep()}, []
        for it in range(3000):
            sigma2, proc = update_spatial_theta(w, proc, sigma2, priors, bounds, steps, rng,
                                                adapt=it < 1000)
            if it >= 1000:
                trace.append(proc.phi)
        lo, hi = np.quantile(trace, [0.025, 0.975])
        hits += lo <= 5.0 <= hi
    assert hits >= 21


def grid_posterior_mean(y, mask, var=2.72):
    g = np.linspace(-9, 9, 1201)
    b, a = np.meshgrid(g, g, indexing="ij")
    psi, p = expit(b), expit(a)
    loglik = np.zeros_like(b)
    for j in range(y.shape[0]):
        k = mask[j].sum()
        d = y[j][mask[j]].sum()
        if d > 0:
            loglik += np.log(psi) + d * np.log(p) + (k - d) * np.log1p(-p)
        else:
            loglik += np.log(psi * (1 - p) ** k + 1 - psi)
    logpost = loglik - (b**2 + a**2) / (2 * var)
    w = np.exp(logpost - logpost.max())
    return float((w * b).sum() / w.sum()), float((w * a).sum() / w.sum())


@pytest.mark.slow
def test_tiny_model_matches_grid_posterior():
    y = np.array([[[1, 0], [0, 0], [1, 1], [0, 0]]], dtype=np.int8)
    mask = np.ones((4, 2), bool)
    ds = make_dataset(np.random.default_rng(0).random((4, 2)), {},
                      [("1", y, mask, {}, np.arange(4))])
    spec = ModelSpec(n_iter=60_000, n_burn=1000, n_chains=4, seed=22)
    ch = fit(spec, ds)
    b_mean, a_mean = grid_posterior_mean(y[0], mask)
    assert abs(ch.pooled("beta").mean() - b_mean) < 0.02
    assert abs(ch.pooled("alpha.1").mean() - a_mean) < 0.02


@pytest.mark.slow
def test_observer_variance_recovered():
    sim = sim_occ(1076, 5, (0.5, 0.8), (-0.3, 0.4), seed=23, det_re={"obs": (250, 2.4)})
    ch = fit(ModelSpec(det_random=("obs",), n_iter=3000, n_burn=1000, seed=3), sim.dataset)
    med = np.median(ch.pooled("sigma2_det.1.obs"))
    assert 1.5 < med < 3.7
