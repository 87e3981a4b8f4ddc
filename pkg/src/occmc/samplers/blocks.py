"""Full-conditional updates shared by every occupancy sampler.

All updates assume Polya-Gamma augmentation of Bernoulli-logit terms: a
binary outcome ``b`` with linear predictor ``eta`` contributes
``exp(kappa * eta - omega * eta**2 / 2)`` with ``kappa = b - 0.5``, so
coefficient blocks with normal priors have Gaussian conditionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ..draws import checked_cholesky, pg1_array


def _canonical_draw(Q, b, rng):
    # draw from N(Q^{-1} b, Q^{-1}) with one factorization
    L = checked_cholesky(Q)
    v = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L, v + rng.standard_normal(b.shape[0]), lower=True, trans="T",
                            check_finite=False)


def update_coefficients(X, kappa, omega, prior_mean, prior_var, rng, offset=None):
    """Draw regression coefficients from their Polya-Gamma conditional.

    The draw is from ``Normal(V (X^T kappa' + S0^{-1} mu0), V)`` with
    ``V = (X^T Omega X + S0^{-1})^{-1}`` and ``kappa' = kappa - omega * offset``.
    ``prior_var`` may be a scalar, a vector (diagonal prior) or a full matrix.
    Passing zero rows returns a draw from the prior.
    """
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    mu0 = np.broadcast_to(np.asarray(prior_mean, dtype=float), (p,))
    pv = np.asarray(prior_var, dtype=float)
    if pv.ndim == 2:
        prior_prec = np.linalg.inv(pv)
    else:
        prior_prec = np.diag(1.0 / np.broadcast_to(pv, (p,)))
    k = np.asarray(kappa, dtype=float)
    if offset is not None:
        k = k - omega * offset
    Q = (X.T * omega) @ X + prior_prec
    b = X.T @ k + prior_prec @ mu0
    return _canonical_draw(Q, b, rng)


def update_pg_weights(eta, rng, active=None):
    """PG(1, eta) weights; entries outside ``active`` are returned as NaN."""
    eta = np.asarray(eta, dtype=float)
    if active is None:
        return pg1_array(eta.ravel(), rng).reshape(eta.shape)
    out = np.full(eta.shape, np.nan)
    out[active] = pg1_array(eta[active], rng)
    return out


def occupancy_probability(psi, log_q, detected):
    """P(z = 1 | y): 1 where detected, else ``psi q / (psi q + 1 - psi)``.

    ``log_q`` is the sum over surveyed replicates of ``log(1 - p)``.
    """
    q = np.exp(log_q)
    prob = psi * q / (psi * q + (1.0 - psi))
    return np.where(detected, 1.0, prob)


def update_z(psi, p, y, mask, rng):
    """Latent occupancy for one species and one data source.

    ``psi`` (J,), ``p``/``y`` (J, K), ``mask`` (J, K). Sites with no surveyed
    replicate fall back to ``Bernoulli(psi)``.
    """
    mask = np.asarray(mask, dtype=bool)
    log_q = np.where(mask, np.log1p(-np.asarray(p, dtype=float)), 0.0).sum(axis=1)
    detected = (np.where(mask, y, 0) > 0).any(axis=1)
    prob = occupancy_probability(np.asarray(psi, dtype=float), log_q, detected)
    return (rng.random(prob.shape) < prob).astype(np.int8)


def update_random_effects(levels, n_levels, omega, kappa, offset, variance, rng):
    """Conjugate draw of random-intercept values given Polya-Gamma weights.

    Each level ``l`` has precision ``sum(omega[levels == l]) + 1 / variance``
    and linear term ``sum(kappa - omega * offset)`` over its rows; levels
    without rows are drawn from ``Normal(0, variance)``.
    """
    levels = np.asarray(levels).ravel()
    omega = np.asarray(omega, dtype=float).ravel()
    prec = np.bincount(levels, weights=omega, minlength=n_levels) + 1.0 / variance
    lin = np.bincount(levels, weights=np.ravel(kappa) - omega * np.ravel(offset),
                      minlength=n_levels)
    return lin / prec + rng.standard_normal(n_levels) / np.sqrt(prec)


def update_variance(values, shape, scale, rng):
    """Inverse-gamma conjugate draw for the variance of zero-mean normal values."""
    v = np.asarray(values, dtype=float).ravel()
    return (scale + 0.5 * v @ v) / rng.gamma(shape + 0.5 * v.size)


def update_community(coefs, mu_mean, mu_var, tau_shape, tau_scale, tau2, rng):
    """Community means then variances for species coefficients ``coefs`` (N, p).

    ``mu_k | . ~ Normal`` with precision ``N / tau2_k + 1 / mu_var`` and
    ``tau2_k | . ~ IG(shape + N/2, scale + sum_i (coef_ik - mu_k)^2 / 2)``.
    Returns ``(mu, tau2)``.
    """
    coefs = np.atleast_2d(np.asarray(coefs, dtype=float))
    N, p = coefs.shape
    prec = N / tau2 + 1.0 / mu_var
    mean = (coefs.sum(0) / tau2 + mu_mean / mu_var) / prec
    mu = mean + rng.standard_normal(p) / np.sqrt(prec)
    ss = ((coefs - mu) ** 2).sum(0)
    tau2_new = (tau_scale + 0.5 * ss) / rng.gamma(tau_shape + 0.5 * N, 1.0, size=p)
    return mu, tau2_new


# ---------------------------------------------------------------------------
# Spatial covariance parameters
# ---------------------------------------------------------------------------

def _logit(u):
    return math.log(u) - math.log1p(-u)


@dataclass
class AdaptiveStep:
    """Random-walk scale tuned toward a target acceptance rate in batches.

    After each batch the log scale moves up (acceptance above target) or down
    by ``min(0.25, 1 / sqrt(batch number))``. Adaptation is only requested
    during burn-in, so the retained chain uses a fixed kernel.
    """

    log_scale: float = math.log(0.5)
    target: float = 0.43
    batch: int = 25
    accepted: int = 0
    tried: int = 0
    n_batches: int = 0
    total_accepted: int = 0
    total_tried: int = 0

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale)

    def record(self, accepted: bool, adapt: bool) -> None:
        self.tried += 1
        self.total_tried += 1
        self.accepted += int(accepted)
        self.total_accepted += int(accepted)
        if self.tried == self.batch:
            if adapt:
                self.n_batches += 1
                delta = min(0.25, 1.0 / math.sqrt(self.n_batches))
                rate = self.accepted / self.tried
                self.log_scale += delta if rate > self.target else -delta
            self.accepted = self.tried = 0

    @property
    def acceptance(self) -> float:
        return self.total_accepted / self.total_tried if self.total_tried else float("nan")


def metropolis_accept(log_new: float, log_old: float, u: float) -> bool:
    """Metropolis acceptance; a proposal with ``log_new = -inf`` is never accepted."""
    if not np.isfinite(log_new):
        return False
    return math.log(u) < log_new - log_old


def log_uniform(value, lo, hi) -> float:
    return -math.log(hi - lo) if lo < value < hi else -math.inf


def _bounded_walk(value, lo, hi, step: AdaptiveStep, rng):
    # random walk on logit((value - lo) / (hi - lo)); returns proposal and log Jacobian ratio
    u = (value - lo) / (hi - lo)
    x_new = _logit(u) + step.scale * rng.standard_normal()
    u_new = 1.0 / (1.0 + math.exp(-x_new))
    u_new = min(max(u_new, 1e-15), 1 - 1e-15)
    new = lo + (hi - lo) * u_new
    log_jac = math.log(u_new * (1 - u_new)) - math.log(u * (1 - u))
    return new, log_jac


def update_sigma2(process, w, shape, scale, rng, quad=None) -> float:
    """Conjugate inverse-gamma draw of the spatial variance given ``w`` and the correlation."""
    J = w.shape[0]
    q = process.quad_form(w) if quad is None else quad
    return (scale + 0.5 * q) / rng.gamma(shape + 0.5 * J)


def shift_intercept(beta0, w, process, sigma2, prior_mean, prior_var, rng):
    """Gibbs draw along ``(beta0 + d, w - d)``, which leaves every linear predictor unchanged.

    Only the priors of the intercept and of ``w`` depend on ``d``; its
    conditional is normal with precision ``1/v + 1'R^-1 1 / sigma2``. The
    move breaks the slow intercept-versus-``w`` trade-off of the plain Gibbs
    scan. Updates ``w`` in place and returns the new intercept.
    """
    a = process.ones_form
    b = process.cross_form(np.ones_like(w), w)
    prec = 1.0 / prior_var + a / sigma2
    mean = ((prior_mean - beta0) / prior_var + b / sigma2) / prec
    d = mean + rng.standard_normal() / math.sqrt(prec)
    w -= d
    return beta0 + d


def update_spatial_theta(w, process, sigma2, priors, phi_bounds, steps, rng, adapt=False):
    """One coordinate-wise update of (sigma2, phi[, nu]).

    ``sigma2`` is drawn from its conjugate inverse-gamma conditional; ``phi``
    and, for the Matern kernel, ``nu`` by random-walk Metropolis on the logit of
    their rescaled uniform support. ``steps`` maps ``'phi'``/``'nu'`` to
    :class:`AdaptiveStep`. Returns ``(sigma2, process)`` where ``process`` is
    the correlation structure at the accepted (phi, nu).
    """
    a, b = priors.sigma2
    q = process.quad_form(w)
    sigma2 = update_sigma2(process, w, a, b, rng, quad=q)
    lo, hi = phi_bounds
    cur = process.logdensity(w, sigma2, quad=q)
    new_phi, log_jac = _bounded_walk(process.phi, lo, hi, steps["phi"], rng)
    cand = process.with_params(new_phi, process.nu)
    new = cand.logdensity(w, sigma2)
    ok = metropolis_accept(new + log_jac, cur, rng.random())
    steps["phi"].record(ok, adapt)
    if ok:
        process, cur = cand, new
    if process.kernel == "matern":
        nlo, nhi = priors.nu
        new_nu, log_jac = _bounded_walk(process.nu, nlo, nhi, steps["nu"], rng)
        cand = process.with_params(process.phi, new_nu)
        new = cand.logdensity(w, sigma2)
        ok = metropolis_accept(new + log_jac, cur, rng.random())
        steps["nu"].record(ok, adapt)
        if ok:
            process = cand
    return sigma2, process


__all__ = [
    "AdaptiveStep", "log_uniform", "metropolis_accept", "occupancy_probability",
    "shift_intercept", "update_coefficients", "update_community", "update_pg_weights",
    "update_random_effects", "update_sigma2", "update_spatial_theta", "update_variance",
    "update_z",
]
