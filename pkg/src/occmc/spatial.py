"""Spatial correlation kernels, dense GP covariances and NNGP machinery."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np
from scipy import special
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.spatial import cKDTree

from .draws import SPDError

KERNELS = ("exponential", "spherical", "gaussian", "matern")
NU_MAX = 2.5

_JITTER = 1e-8
_JITTER_MAX = 1e-4


@dataclass(frozen=True)
class KernelParams:
    sigma2: float
    phi: float
    nu: float = 0.5

    def __post_init__(self):
        for name in ("sigma2", "phi", "nu"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


_FLUSH = 1e-20
_FLUSH_ARG = -math.log(_FLUSH)


def _check_kernel(kernel):
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


def correlation(kernel: str, phi: float, nu: float | None, distance):
    """Correlation between two sites ``distance`` apart.

    Works elementwise on arrays. The spherical kernel has compact support
    and returns exactly 0 beyond ``1 / phi``. Correlations below ``1e-20``
    are returned as 0: factorizations otherwise underflow into very slow
    subnormal arithmetic.
    """
    _check_kernel(kernel)
    d = np.asarray(distance, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    x = phi * d
    if kernel in ("exponential", "gaussian"):
        arg = x if kernel == "exponential" else x * x
        out = np.zeros(np.shape(arg))
        np.exp(-arg, out=out, where=arg < _FLUSH_ARG)
    elif kernel == "spherical":
        out = np.where(x <= 1.0, 1.0 - 1.5 * x + 0.5 * x**3, 0.0)
    else:
        if nu is None or not 0 < nu <= NU_MAX:
            raise ValueError(f"Matern smoothness must lie in (0, {NU_MAX}]")
        pos = x > 0
        xs = np.where(pos, x, 1.0)
        # kve(nu, x) = kv(nu, x) e^x; keeps large-x values finite before scaling
        val = (2.0 ** (1 - nu) / special.gamma(nu)) * np.exp(
            nu * np.log(xs) + np.log(special.kve(nu, xs)) - xs)
        out = np.where(pos, val, 1.0)
        out = np.clip(np.nan_to_num(out, nan=0.0), 0.0, 1.0)
        out = np.where(out < _FLUSH, 0.0, out)
    return out[()] if out.ndim == 0 else out


def pairwise_distances(a, b=None):
    a = np.asarray(a, dtype=float)
    b = a if b is None else np.asarray(b, dtype=float)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def dense_covariance(coords, kernel: str, params: KernelParams) -> np.ndarray:
    """J x J covariance sigma2 * correlation(d(s_a, s_b)), without jitter."""
    d = pairwise_distances(coords)
    return params.sigma2 * correlation(kernel, params.phi, params.nu, d)


def jittered_cholesky(cov: np.ndarray, scale: float | None = None):
    """Cholesky factor of ``cov + eps * scale * I`` with escalating eps.

    Starts at ``eps = 1e-8`` and multiplies by 10 up to ``1e-4``. Returns the
    factor and the eps that was used.
    """
    n = cov.shape[0]
    if scale is None:
        scale = float(np.mean(np.diag(cov))) if n else 1.0
    eps = _JITTER
    while True:
        try:
            return np.linalg.cholesky(cov + eps * scale * np.eye(n)), eps
        except np.linalg.LinAlgError:
            if eps >= _JITTER_MAX * (1 - 1e-9):
                raise SPDError(f"covariance not SPD after jitter {eps:g}") from None
            eps *= 10


# ---------------------------------------------------------------------------
# Neighbor graph
# ---------------------------------------------------------------------------

def coordinate_ordering(coords) -> np.ndarray:
    """Sites sorted by first coordinate, ties broken by the second."""
    coords = np.asarray(coords, dtype=float)
    return np.lexsort((coords[:, 1], coords[:, 0]))


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """Ordered nearest-neighbor sets for an NNGP.

    All index arrays refer to original site indices. ``neighbors[j, :n_neighbors[j]]``
    are the (distance-sorted) neighbors of site ``j``; the remaining slots hold -1.
    Children are stored in CSR form: the sites listing ``j`` as a neighbor are
    ``child_idx[child_ptr[j]:child_ptr[j+1]]`` and ``child_pos`` gives the slot
    ``j`` occupies in each child's neighbor list.
    """

    coords: np.ndarray
    m: int
    order: np.ndarray
    neighbors: np.ndarray
    n_neighbors: np.ndarray
    child_ptr: np.ndarray = field(repr=False)
    child_idx: np.ndarray = field(repr=False)
    child_pos: np.ndarray = field(repr=False)

    @property
    def n_sites(self) -> int:
        return self.coords.shape[0]

    def children(self, j: int) -> np.ndarray:
        return self.child_idx[self.child_ptr[j]:self.child_ptr[j + 1]]

    def neighbors_of(self, j: int) -> np.ndarray:
        return self.neighbors[j, : self.n_neighbors[j]]

    @cached_property
    def distances(self):
        """(site-to-neighbor distances (J, m), neighbor-to-neighbor distances (J, m, m))."""
        idx = np.where(self.neighbors >= 0, self.neighbors, 0)
        nc = self.coords[idx]
        d_sn = np.sqrt(((nc - self.coords[:, None, :]) ** 2).sum(-1))
        d_nn = np.sqrt(((nc[:, :, None, :] - nc[:, None, :, :]) ** 2).sum(-1))
        return d_sn, d_nn

    @cached_property
    def distance_table(self):
        """Distinct neighbor distances and codes into them.

        Returns ``(values, sn_code (J, m), nn_code (J, m, m))``. Distances
        equal to within ``2^-40`` of the largest are merged, so on regular
        grids each kernel evaluation covers many site-neighbor pairs.
        """
        d_sn, d_nn = self.distances
        valid = self.valid
        pair = valid[:, :, None] & valid[:, None, :]
        scale = max(float(d_sn.max(initial=0.0)), float(d_nn.max(initial=0.0)), 1e-300)
        keys = np.concatenate([d_sn[valid], d_nn[pair]])
        q = np.round(keys / scale * 2.0**40).astype(np.int64)
        uq, first, inv = np.unique(q, return_index=True, return_inverse=True)
        values = keys[first]
        sn_code = np.zeros(d_sn.shape, dtype=np.int32)
        nn_code = np.zeros(d_nn.shape, dtype=np.int32)
        n_sn = int(valid.sum())
        sn_code[valid] = inv[:n_sn]
        nn_code[pair] = inv[n_sn:]
        return values, sn_code, nn_code

    @cached_property
    def geometry_classes(self):
        """Sites grouped by identical neighbor geometry.

        Each site's neighbor slots are put in a canonical order (by offset
        from the site), so sites whose neighborhoods are translates of each
        other share a class even when distance ties left their slots in a
        different order. Sites in one class have the same NNGP factors up to
        that slot permutation.

        Returns ``(rep, cls, sn_code, nn_code, n_nbr, slot)``: ``rep`` holds
        one site per class, ``cls[j]`` is the class of site ``j``, the code
        arrays describe the representatives in canonical order, and
        ``slot[j, a]`` is the canonical position of slot ``a`` of site ``j``.
        """
        _, sn_code, nn_code = self.distance_table
        J, m = sn_code.shape
        valid = self.valid
        off = self.coords[np.where(valid, self.neighbors, 0)] - self.coords[:, None, :]
        scale = max(float(np.abs(off).max(initial=0.0)), 1e-300)
        q = np.round(off / scale * 2.0**40).astype(np.int64)
        big = np.iinfo(np.int64).max
        canon = np.lexsort((np.where(valid, q[..., 1], big), np.where(valid, q[..., 0], big)),
                           axis=-1)
        slot = np.empty_like(canon)
        np.put_along_axis(slot, canon, np.arange(m)[None, :], axis=1)
        sn_c = np.take_along_axis(sn_code, canon, axis=1)
        nn_c = nn_code[np.arange(J)[:, None, None], canon[:, :, None], canon[:, None, :]]
        tri = np.tril_indices(m, -1)
        key = np.concatenate([self.n_neighbors[:, None].astype(np.int32), sn_c,
                              nn_c[:, tri[0], tri[1]]], axis=1)
        _, rep, cls = np.unique(key, axis=0, return_index=True, return_inverse=True)
        return (rep, cls.ravel(), np.ascontiguousarray(sn_c[rep]),
                np.ascontiguousarray(nn_c[rep]), np.ascontiguousarray(self.n_neighbors[rep]),
                slot)

    @cached_property
    def ranked_gather(self):
        """Flat indices taking class factors ``B (n_class, m)`` and ``F`` to rank order."""
        _, cls, _, _, _, slot = self.geometry_classes
        c = cls[self.order]
        m = slot.shape[1]
        return c[:, None] * m + slot[self.order], c

    @cached_property
    def ranked(self):
        """The graph relabelled by position in the ordering.

        Returns ``(rank, identity order, neighbors, n_neighbors, child_ptr,
        child_idx, child_pos)`` with all indices being ranks. Sweeping in
        this labelling touches memory almost sequentially.
        """
        J = self.n_sites
        rank = np.empty(J, dtype=np.int64)
        rank[self.order] = np.arange(J)
        nb = self.neighbors[self.order]
        nbr = np.where(nb >= 0, rank[np.where(nb >= 0, nb, 0)], -1)
        n_nbr = np.ascontiguousarray(self.n_neighbors[self.order])
        ptr, idx, pos = _children_csr(nbr, n_nbr)
        return rank, np.arange(J, dtype=np.int64), nbr, n_nbr, ptr, idx, pos

    @cached_property
    def valid(self) -> np.ndarray:
        return self.neighbors >= 0

    def to_csv(self, path) -> None:
        """Write ``site, rank, neighbors`` rows (neighbors space separated)."""
        rank = np.empty(self.n_sites, dtype=int)
        rank[self.order] = np.arange(self.n_sites)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["site_id", "rank", "neighbors"])
            for j in range(self.n_sites):
                wr.writerow([j, rank[j], " ".join(str(int(v)) for v in self.neighbors_of(j))])


def _children_csr(neighbors, n_neighbors):
    J, m = neighbors.shape
    parent, slot = np.nonzero(neighbors >= 0)
    target = neighbors[parent, slot]
    order = np.lexsort((parent, target))
    target, parent, slot = target[order], parent[order], slot[order]
    ptr = np.zeros(J + 1, dtype=np.int64)
    np.add.at(ptr, target + 1, 1)
    return np.cumsum(ptr), parent.astype(np.int64), slot.astype(np.int64)


def _finish_graph(coords, m, order, nbr_ranked):
    J = coords.shape[0]
    neighbors = np.full((J, m), -1, dtype=np.int64)
    n_nb = np.zeros(J, dtype=np.int64)
    for r in range(J):
        site = order[r]
        nb = nbr_ranked[r]
        neighbors[site, : len(nb)] = order[nb]
        n_nb[site] = len(nb)
    ptr, idx, pos = _children_csr(neighbors, n_nb)
    return NeighborGraph(coords, m, order, neighbors, n_nb, ptr, idx, pos)


def _validate_graph_input(coords, m):
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError("coords must have shape (J, 2)")
    if int(m) != m or m < 1:
        raise ValueError("number of neighbors must be an integer >= 1")
    return coords, int(m)


def _sorted_candidates(d, idx, rank):
    keep = idx < rank
    d, idx = d[keep], idx[keep]
    o = np.lexsort((idx, d))
    return d[o], idx[o]


def build_neighbor_graph(coords, m: int) -> NeighborGraph:
    """Nearest-predecessor graph under coordinate ordering, found with a kd-tree.

    Each site's neighbor set is the ``min(m, rank)`` closest sites that come
    earlier in the ordering, ties in distance broken by lower rank.
    """
    coords, m = _validate_graph_input(coords, m)
    J = coords.shape[0]
    order = coordinate_ordering(coords)
    oc = coords[order]
    tree = cKDTree(oc)
    nbr = [np.empty(0, dtype=np.int64) for _ in range(J)]
    pending = np.arange(1, J)
    k = min(J, 2 * m + 2)
    while pending.size:
        d, idx = tree.query(oc[pending], k=k)
        d = np.atleast_2d(d).reshape(pending.size, -1)
        idx = np.atleast_2d(idx).reshape(pending.size, -1)
        still = []
        for row, r in enumerate(pending):
            need = min(m, r)
            cd, ci = _sorted_candidates(d[row], idx[row], r)
            # exact only if the need-th candidate is strictly inside the search ball
            if cd.size >= need and (k >= J or cd[need - 1] < d[row, -1]):
                nbr[r] = ci[:need].astype(np.int64)
            else:
                still.append(r)
        pending = np.asarray(still, dtype=np.int64)
        k = min(J, 2 * k)
    return _finish_graph(coords, m, order, nbr)


def build_neighbor_graph_brute(coords, m: int) -> NeighborGraph:
    """Reference O(J^2) construction of :func:`build_neighbor_graph`."""
    coords, m = _validate_graph_input(coords, m)
    order = coordinate_ordering(coords)
    oc = coords[order]
    nbr = []
    for r in range(coords.shape[0]):
        d = np.sqrt(((oc[:r] - oc[r]) ** 2).sum(-1))
        o = np.lexsort((np.arange(r), d))
        nbr.append(o[: min(m, r)].astype(np.int64))
    return _finish_graph(coords, m, order, nbr)


# ---------------------------------------------------------------------------
# NNGP factors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NNGPFactors:
    """Per-site regression weights ``B`` (J, m) and conditional variances ``F`` (J,)."""

    B: np.ndarray
    F: np.ndarray
    jitter: float


@numba.njit(cache=True, nogil=True)
def _solve_factors(r, sn_code, nn_code, n_nbr, jitter):
    # Per site: Cholesky of the neighbor correlation + jitter I, then
    # B = R_nn^{-1} r_sn and F = 1 + jitter - B r_sn. Correlations are read
    # from r[code] with codes from the graph's distance table.
    J, m = sn_code.shape
    B = np.zeros((J, m))
    F = np.empty(J)
    L = np.empty((m, m))
    y = np.empty(m)
    for j in range(J):
        n = n_nbr[j]
        for a in range(n):
            for b in range(a):
                s = r[nn_code[j, a, b]]
                for c in range(b):
                    s -= L[a, c] * L[b, c]
                L[a, b] = s / L[b, b]
            s = 1.0 + jitter
            for c in range(a):
                s -= L[a, c] * L[a, c]
            if s <= 0.0:
                return B, F, False
            L[a, a] = math.sqrt(s)
        for a in range(n):
            s = r[sn_code[j, a]]
            for c in range(a):
                s -= L[a, c] * y[c]
            y[a] = s / L[a, a]
        for a in range(n - 1, -1, -1):
            s = y[a]
            for c in range(a + 1, n):
                s -= L[c, a] * B[j, c]
            B[j, a] = s / L[a, a]
        f = 1.0 + jitter
        for a in range(n):
            f -= B[j, a] * r[sn_code[j, a]]
        if not f > 0.0:
            return B, F, False
        F[j] = f
    return B, F, True


def _unit_factors(graph: NeighborGraph, kernel, phi, nu, jitter):
    values = graph.distance_table[0]
    _, cls, sn_code, nn_code, n_nbr, _ = graph.geometry_classes
    r = np.atleast_1d(correlation(kernel, phi, nu, values)).astype(float)
    while True:
        B, F, ok = _solve_factors(r, sn_code, nn_code, n_nbr, jitter)
        if ok and np.all(np.isfinite(B)):
            return B, F, cls, jitter
        if jitter >= _JITTER_MAX:
            raise SPDError("NNGP neighbor covariance not positive definite")
        jitter = max(jitter * 10, _JITTER)


def nngp_factors(graph: NeighborGraph, kernel: str, params: KernelParams,
                 jitter: float = _JITTER) -> NNGPFactors:
    """Conditional-regression factors of the NNGP.

    ``B_j = C(s_j, N_j) C(N_j, N_j)^{-1}`` and
    ``F_j = C(s_j, s_j) - B_j C(N_j, s_j)``, with ``jitter * sigma2`` added to
    every variance so that ``m = J - 1`` reproduces the jittered dense model.
    """
    _check_kernel(kernel)
    B, F, cls, eps = _unit_factors(graph, kernel, params.phi, params.nu, jitter)
    slot = graph.geometry_classes[5]
    return NNGPFactors(np.take_along_axis(B[cls], slot, axis=1), params.sigma2 * F[cls], eps)


def nngp_residuals(w, graph: NeighborGraph, B):
    idx = np.where(graph.valid, graph.neighbors, 0)
    return w - np.einsum("jm,jm->j", B, np.where(graph.valid, w[idx], 0.0))


def nngp_logdensity(w, graph: NeighborGraph, factors: NNGPFactors) -> float:
    """Log of prod_j Normal(w_j | B_j w_{N_j}, F_j)."""
    w = np.asarray(w, dtype=float)
    e = nngp_residuals(w, graph, factors.B)
    return float(-0.5 * np.sum(np.log(2 * np.pi * factors.F) + e * e / factors.F))


@numba.njit(cache=True, nogil=True)
def _nngp_pass(w, order, nbr, n_nbr, B, F, child_ptr, child_idx, child_pos,
               data_prec, data_lin, gen):
    # e holds current residuals w_c - B_c w_{N_c}; updating w_j shifts the
    # residual of j and of each child, which keeps the pass O(J m).
    J = w.shape[0]
    e = np.empty(J)
    for j in range(J):
        s = w[j]
        for l in range(n_nbr[j]):
            s -= B[j, l] * w[nbr[j, l]]
        e[j] = s
    for t in range(order.shape[0]):
        j = order[t]
        wj = w[j]
        prec = 1.0 / F[j]
        lin = (wj - e[j]) / F[j]
        for q in range(child_ptr[j], child_ptr[j + 1]):
            c = child_idx[q]
            b = B[c, child_pos[q]]
            a = e[c] + b * wj
            prec += b * b / F[c]
            lin += b * a / F[c]
        prec += data_prec[j]
        lin += data_lin[j]
        var = 1.0 / prec
        new = var * lin + math.sqrt(var) * gen.standard_normal()
        delta = new - wj
        e[j] += delta
        for q in range(child_ptr[j], child_ptr[j + 1]):
            e[child_idx[q]] -= B[child_idx[q], child_pos[q]] * delta
        w[j] = new
    return w


@numba.njit(cache=True, nogil=True)
def _cross_form(u, v, nbr, n_nbr, B, F):
    # u' (I - B)' F^-1 (I - B) v
    q = 0.0
    for j in range(u.shape[0]):
        eu = u[j]
        ev = v[j]
        for l in range(n_nbr[j]):
            eu -= B[j, l] * u[nbr[j, l]]
            ev -= B[j, l] * v[nbr[j, l]]
        q += eu * ev / F[j]
    return q


def sample_w_sequential(w, graph: NeighborGraph, factors: NNGPFactors,
                        data_prec, data_lin, rng: np.random.Generator) -> np.ndarray:
    """One in-place Gibbs pass over all spatial effects, in NNGP order.

    Each ``w_j`` is drawn from its univariate full conditional, combining its
    own NNGP prior term, the terms of every child that conditions on it, and a
    Gaussian data term with precision ``data_prec[j]`` and linear coefficient
    ``data_lin[j]`` (for Polya-Gamma augmentation: ``omega_j`` and
    ``kappa_j - omega_j * offset_j``). Cost is O(J m) per pass given factors.
    """
    return _nngp_pass(w, graph.order, graph.neighbors, graph.n_neighbors,
                      factors.B, factors.F, graph.child_ptr, graph.child_idx,
                      graph.child_pos, np.asarray(data_prec, dtype=float),
                      np.asarray(data_lin, dtype=float), rng)


# ---------------------------------------------------------------------------
# Processes used by the samplers: correlation structure at a given (phi, nu)
# ---------------------------------------------------------------------------

class NNGPProcess:
    """Unit-variance NNGP correlation structure at fixed (phi, nu).

    Factors are held in rank order (see :attr:`NeighborGraph.ranked`).
    """

    mode = "nngp"

    def __init__(self, graph: NeighborGraph, kernel: str, phi: float, nu: float = 0.5):
        self.graph = graph
        self.kernel = kernel
        self.phi = phi
        self.nu = nu
        B, F, cls, self.jitter = _unit_factors(graph, kernel, phi, nu, _JITTER)
        flat, c = graph.ranked_gather
        self.B, self.Fu = B.ravel()[flat], F[c]
        self.log_det = float(np.sum(np.log(self.Fu)))

    def with_params(self, phi, nu):
        return NNGPProcess(self.graph, self.kernel, phi, nu)

    def cross_form(self, u, v) -> float:
        """``u' R^-1 v`` for the NNGP correlation ``R``."""
        _, _, nbr, n_nbr, _, _, _ = self.graph.ranked
        order = self.graph.order
        return _cross_form(np.asarray(u, dtype=float)[order], np.asarray(v, dtype=float)[order],
                           nbr, n_nbr, self.B, self.Fu)

    def quad_form(self, w) -> float:
        return self.cross_form(w, w)

    @cached_property
    def ones_form(self) -> float:
        """``1' R^-1 1``."""
        one = np.ones(self.graph.n_sites)
        return self.cross_form(one, one)

    def logdensity(self, w, sigma2, quad=None) -> float:
        """Log density of ``w`` at variance ``sigma2``; ``quad`` reuses a known quadratic form."""
        J = w.shape[0]
        q = self.quad_form(w) if quad is None else quad
        return -0.5 * (J * math.log(2 * math.pi * sigma2) + self.log_det + q / sigma2)

    def sample_w(self, w, sigma2, data_prec, data_lin, rng):
        _, ident, nbr, n_nbr, ptr, idx, pos = self.graph.ranked
        order = self.graph.order
        wr = w[order]
        _nngp_pass(wr, ident, nbr, n_nbr, self.B, sigma2 * self.Fu, ptr, idx, pos,
                   np.asarray(data_prec, dtype=float)[order],
                   np.asarray(data_lin, dtype=float)[order], rng)
        w[order] = wr
        return w

    def draw_prior(self, sigma2, rng):
        _, _, nbr, n_nbr, _, _, _ = self.graph.ranked
        J = self.graph.n_sites
        wr = np.zeros(J)
        sd = np.sqrt(sigma2 * self.Fu)
        z = rng.standard_normal(J)
        for r in range(J):
            n = n_nbr[r]
            wr[r] = self.B[r, :n] @ wr[nbr[r, :n]] + sd[r] * z[r]
        w = np.empty(J)
        w[self.graph.order] = wr
        return w


class DenseProcess:
    """Full Gaussian-process correlation structure at fixed (phi, nu)."""

    mode = "full"

    def __init__(self, coords, kernel: str, phi: float, nu: float = 0.5, _dist=None):
        self.coords = np.asarray(coords, dtype=float)
        self.kernel = kernel
        self.phi = phi
        self.nu = nu
        self._dist = pairwise_distances(self.coords) if _dist is None else _dist
        R = correlation(kernel, phi, nu, self._dist)
        self.chol, self.jitter = jittered_cholesky(R, 1.0)
        R[np.diag_indices_from(R)] += self.jitter
        self.corr = R
        self.log_det = float(2 * np.sum(np.log(np.diag(self.chol))))

    def with_params(self, phi, nu):
        return DenseProcess(self.coords, self.kernel, phi, nu, _dist=self._dist)

    @cached_property
    def precision(self):
        inv_l = solve_triangular(self.chol, np.eye(self.chol.shape[0]), lower=True)
        return inv_l.T @ inv_l

    def quad_form(self, w) -> float:
        v = solve_triangular(self.chol, w, lower=True)
        return float(v @ v)

    def cross_form(self, u, v) -> float:
        """``u' R^-1 v`` with the jittered correlation ``R``."""
        a = solve_triangular(self.chol, u, lower=True)
        b = solve_triangular(self.chol, v, lower=True)
        return float(a @ b)

    @cached_property
    def ones_form(self) -> float:
        """``1' R^-1 1``."""
        one = np.ones(self.chol.shape[0])
        return self.cross_form(one, one)

    def logdensity(self, w, sigma2, quad=None) -> float:
        J = w.shape[0]
        q = self.quad_form(w) if quad is None else quad
        return -0.5 * (J * math.log(2 * math.pi * sigma2) + self.log_det + q / sigma2)

    def sample_w(self, w, sigma2, data_prec, data_lin, rng):
        """Joint draw of ``w`` given Gaussian data terms.

        With every data precision positive the draw perturbs a prior sample
        (``w0 ~ N(0, S)``, ``S = sigma2 R``) toward pseudo-observations
        ``y = data_lin / data_prec`` with noise variance ``1 / data_prec``:
        ``w = w0 + S (S + D^-1)^-1 (y - w0 - e)``. This needs one Cholesky
        factorization and never forms ``R^-1``, whose tiny entries are slow
        to work with. Otherwise the precision form is used.
        """
        data_prec = np.asarray(data_prec, dtype=float)
        n = w.shape[0]
        if np.all(data_prec > 0):
            dinv = 1.0 / data_prec
            A = sigma2 * self.corr
            A[np.diag_indices_from(A)] += dinv
            cf = cho_factor(A, lower=True, check_finite=False)
            w0 = math.sqrt(sigma2) * (self.chol @ rng.standard_normal(n))
            e = np.sqrt(dinv) * rng.standard_normal(n)
            v = cho_solve(cf, data_lin * dinv - w0 - e, check_finite=False)
            w[:] = w0 + sigma2 * (self.corr @ v)
            return w
        q = self.precision / sigma2
        q[np.diag_indices_from(q)] += data_prec
        L = np.linalg.cholesky(q)
        mean = solve_triangular(L, data_lin, lower=True)
        mean = solve_triangular(L, mean + rng.standard_normal(n), lower=True, trans="T")
        w[:] = mean
        return w

    def draw_prior(self, sigma2, rng):
        return math.sqrt(sigma2) * (self.chol @ rng.standard_normal(self.chol.shape[0]))
