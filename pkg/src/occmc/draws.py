"""Random variate generators used by the Gibbs samplers.

Every generator takes an explicit ``numpy.random.Generator``. Streams are
built with :func:`rng_stream`, which keys a counter-based Philox generator
on ``(seed, chain, substream)`` so a chain's draws never depend on how many
other chains exist or which thread runs them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "RngStream",
    "SPDError",
    "rng_stream",
    "draw_pg",
    "draw_pg_truncated",
    "pg_mean",
    "pg_var",
    "draw_mvn",
    "draw_inverse_gamma",
    "draw_uniform",
    "draw_bernoulli",
]

_TRUNC = 0.64
_PI = math.pi
_PI2 = math.pi * math.pi


@dataclass(frozen=True)
class RngStream:
    """Identity of an independent random stream."""

    seed: int
    chain: int = 0
    substream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) & 0xFFFFFFFFFFFFFFFF,
                                    spawn_key=(int(self.chain), int(self.substream)))
        return np.random.Generator(np.random.Philox(ss))


def rng_stream(seed: int, chain: int = 0, substream: int = 0) -> np.random.Generator:
    return RngStream(seed, chain, substream).generator()


class SPDError(np.linalg.LinAlgError):
    """A matrix expected to be symmetric positive definite is not."""

    def __init__(self, message, min_pivot=float("nan")):
        super().__init__(message)
        self.min_pivot = min_pivot


# ---------------------------------------------------------------------------
# Polya-Gamma
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _log_norm_cdf(x):
    return math.log(0.5 * math.erfc(-x / math.sqrt(2.0)))


@numba.njit(cache=True)
def _series_coef(n, x):
    # n-th term of the alternating series for the J*(1, 0) density; the
    # representation switches at the truncation point.
    k = (n + 0.5) * _PI
    if x > _TRUNC:
        return k * math.exp(-0.5 * k * k * x)
    if x <= 0.0:
        return 0.0
    expnt = (-1.5 * (math.log(0.5 * _PI) + math.log(x)) + math.log(k)
             - 2.0 * (n + 0.5) * (n + 0.5) / x)
    return math.exp(expnt)


@numba.njit(cache=True)
def _exp_mass(z):
    # probability of the exponential proposal piece (right of the truncation)
    t = _TRUNC
    fz = 0.125 * _PI2 + 0.5 * z * z
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = math.log(fz) + fz * t
    xb = x0 - z + _log_norm_cdf(b)
    xa = x0 + z + _log_norm_cdf(a)
    q_over_p = 4.0 / _PI * (math.exp(xb) + math.exp(xa))
    return 1.0 / (1.0 + q_over_p)


@numba.njit(cache=True)
def _truncated_inv_gauss(z, gen):
    # inverse-Gaussian(1/z, 1) restricted to (0, t)
    t = _TRUNC
    x = t + 1.0
    if 1.0 / t > z:
        alpha = 0.0
        while gen.random() > alpha:
            e1 = gen.standard_exponential()
            e2 = gen.standard_exponential()
            while e1 * e1 > 2.0 * e2 / t:
                e1 = gen.standard_exponential()
                e2 = gen.standard_exponential()
            x = 1.0 + e1 * t
            x = t / (x * x)
            alpha = math.exp(-0.5 * z * z * x)
    else:
        mu = 1.0 / z
        while x > t:
            y = gen.standard_normal()
            y *= y
            half_mu = 0.5 * mu
            mu_y = mu * y
            x = mu + half_mu * mu_y - half_mu * math.sqrt(4.0 * mu_y + mu_y * mu_y)
            if gen.random() > mu / (mu + x):
                x = mu * mu / x
    return x


@numba.njit(cache=True)
def _pg1(c, gen):
    z = abs(c) * 0.5
    fz = 0.125 * _PI2 + 0.5 * z * z
    while True:
        if gen.random() < _exp_mass(z):
            x = _TRUNC + gen.standard_exponential() / fz
        else:
            x = _truncated_inv_gauss(z, gen)
        s = _series_coef(0, x)
        y = gen.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _series_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _series_coef(n, x)
                if y > s:
                    break


@numba.njit(cache=True, nogil=True)
def _pg_ones(c, gen):
    out = np.empty(c.shape[0])
    for i in range(c.shape[0]):
        out[i] = _pg1(c[i], gen)
    return out


def pg1_array(c, rng: np.random.Generator) -> np.ndarray:
    """PG(1, c) draws for a 1-d float array ``c`` (no validation)."""
    return _pg_ones(np.ascontiguousarray(c, dtype=np.float64), rng)


@numba.njit(cache=True, nogil=True)
def _pg_array(b, c, gen):
    out = np.empty(c.shape[0])
    for i in range(c.shape[0]):
        acc = 0.0
        for _ in range(b[i]):
            acc += _pg1(c[i], gen)
        out[i] = acc
    return out


def draw_pg(b, c, rng: np.random.Generator):
    """Exact Polya-Gamma PG(b, c) draws.

    Uses the alternating-series accept/reject sampler for PG(1, c); integer
    ``b > 1`` is handled as a sum of ``b`` independent PG(1, c) draws.
    ``b`` and ``c`` broadcast; a scalar is returned for scalar input.
    """
    c_arr = np.asarray(c, dtype=np.float64)
    b_arr = np.asarray(b)
    if not np.all(np.isfinite(c_arr)):
        raise ValueError("Polya-Gamma tilt must be finite")
    if np.any(b_arr < 1) or np.any(b_arr != np.round(b_arr)):
        raise ValueError("Polya-Gamma shape must be a positive integer")
    b_arr, c_arr = np.broadcast_arrays(b_arr.astype(np.int64), c_arr)
    out = _pg_array(np.ascontiguousarray(b_arr).ravel(), np.ascontiguousarray(c_arr).ravel(), rng)
    if c_arr.ndim == 0:
        return float(out[0])
    return out.reshape(c_arr.shape)


def draw_pg_truncated(b, c, rng: np.random.Generator, n_terms: int = 200):
    """Approximate PG(b, c) by its truncated sum-of-gammas representation.

    Kept as an independent reference for testing :func:`draw_pg`; the
    truncation bias is of order ``1 / n_terms``.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), c.shape)
    k = np.arange(1, n_terms + 1)
    denom = (k - 0.5) ** 2 + (c[:, None] / (2 * np.pi)) ** 2
    g = rng.gamma(b[:, None], 1.0, size=(c.size, n_terms))
    return (g / denom).sum(axis=1) / (2 * np.pi**2)


def pg_mean(b, c):
    """Closed-form mean of PG(b, c)."""
    b = np.asarray(b, dtype=float)
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-6
    safe = np.where(small, 1.0, c)
    out = np.where(small, b / 4.0 * (1 - c**2 / 12), b / (2 * safe) * np.tanh(safe / 2))
    return out[()]


def pg_var(b, c):
    """Closed-form variance of PG(b, c)."""
    b = np.asarray(b, dtype=float)
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-3
    safe = np.where(small, 1.0, c)
    big = b / (4 * safe**3) * (np.sinh(safe) - safe) / np.cosh(safe / 2) ** 2
    out = np.where(small, b / 24.0 * (1 - c**2 / 5), big)
    return out[()]


# ---------------------------------------------------------------------------
# Gaussian, inverse-gamma, uniform, Bernoulli
# ---------------------------------------------------------------------------

_PIVOT_TOL = 1e-12


def checked_cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, raising :class:`SPDError` on (near) singularity.

    A matrix is rejected when its smallest squared pivot falls below
    ``1e-12`` relative to the largest diagonal entry.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(a)):
        raise SPDError("matrix has non-finite entries")
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        # recover the offending pivot for the error message
        eig = float(np.linalg.eigvalsh((a + a.T) / 2).min())
        raise SPDError(f"matrix not positive definite (min pivot {eig:.3e})", eig) from None
    pivots = np.diag(chol) ** 2
    scale = max(float(np.max(np.abs(np.diag(a)))), np.finfo(float).tiny)
    min_pivot = float(pivots.min()) if pivots.size else 1.0
    if min_pivot < _PIVOT_TOL * scale:
        raise SPDError(f"matrix numerically singular (min pivot {min_pivot:.3e})", min_pivot)
    return chol


def draw_mvn(mean, matrix, rng: np.random.Generator, *, precision: bool = False):
    """One multivariate normal draw.

    Parameters
    ----------
    mean : array_like, shape (d,)
    matrix : array_like, shape (d, d)
        Covariance matrix, or precision matrix when ``precision=True``.
    """
    mean = np.asarray(mean, dtype=float)
    chol = checked_cholesky(matrix)
    z = rng.standard_normal(mean.shape[0])
    if precision:
        # Q = L L^T  =>  L^{-T} z ~ N(0, Q^{-1})
        return mean + solve_triangular(chol, z, lower=True, trans="T")
    return mean + chol @ z


def draw_inverse_gamma(shape, scale, rng: np.random.Generator, size=None):
    """Inverse-gamma draws with density proportional to x^(-shape-1) exp(-scale/x)."""
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(shape <= 0) or np.any(scale <= 0):
        raise ValueError("inverse-gamma shape and scale must be positive")
    out = scale / rng.gamma(shape, 1.0, size=size)
    return out[()] if np.ndim(out) == 0 else out


def draw_uniform(lo, hi, rng: np.random.Generator, size=None):
    if not np.all(np.asarray(lo) < np.asarray(hi)):
        raise ValueError("uniform bounds require lo < hi")
    return rng.uniform(lo, hi, size=size)


def draw_bernoulli(p, rng: np.random.Generator, size=None):
    """Bernoulli draws as int8; p=0 and p=1 are honoured exactly."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("Bernoulli probability outside [0, 1]")
    shape = p.shape if size is None else size
    out = (rng.random(shape) < p).astype(np.int8)
    return out[()] if np.ndim(out) == 0 else out
