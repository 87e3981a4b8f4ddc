"""Gibbs sampler for single-species, multispecies and integrated occupancy models.

One engine covers all six model classes. A model has ``N`` species and ``S``
detection sources sharing one latent occupancy surface per species: the
single-species model is ``N = S = 1``, the multispecies model adds a
community level over species coefficients, and the integrated model has one
species with several sources. Spatial variants add a Gaussian-process (full
or NNGP) random intercept per species to the occurrence predictor.
"""

from __future__ import annotations

import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..data import Dataset, ModelSpec, PriorSpec
from ..draws import pg1_array
from ..spatial import DenseProcess, NNGPProcess, build_neighbor_graph
from . import blocks

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """A sampler block failed numerically; carries where it happened."""

    def __init__(self, iteration, block, cause):
        super().__init__(f"numerical failure at iteration {iteration} in block {block!r}: {cause}")
        self.iteration = iteration
        self.block = block


@dataclass
class _Source:
    sid: str
    site: np.ndarray        # shared site index of each surveyed cell
    cell_j: np.ndarray      # local site index of each surveyed cell
    cell_k: np.ndarray
    V: np.ndarray           # (n_cells, q)
    y: np.ndarray           # (N, n_cells)
    re_levels: dict         # name -> (n_cells,) level codes
    re_n: dict
    shape: tuple            # (J_s, K)
    n_sites: int
    alpha: np.ndarray = None
    re: dict = field(default_factory=dict)       # name -> (N, L)
    re_var: dict = field(default_factory=dict)   # name -> float


class OccupancySampler:
    """State and one-sweep transition of an occupancy-model Gibbs sampler.

    Parameters
    ----------
    dataset : Dataset
    spec : ModelSpec
    rng : numpy.random.Generator
        Stream owned by this chain.
    graph : NeighborGraph, optional
        Prebuilt neighbor graph (shared across chains).
    phi_bounds : (float, float), optional
        Support of the uniform decay prior; derived from coordinates if absent.
    """

    def __init__(self, dataset: Dataset, spec: ModelSpec, rng, graph=None, phi_bounds=None):
        self.spec = spec
        self.priors: PriorSpec = spec.priors
        self.rng = rng
        self.community = spec.model == "msom"
        self.spatial = spec.spatial
        self.N = dataset.n_species
        self.J = dataset.n_sites
        self.X = np.ascontiguousarray(dataset.occurrence.X, dtype=float)
        self.p_occ = self.X.shape[1]
        self.has_intercept = self.p_occ > 0 and bool(np.all(self.X[:, 0] == 1.0))
        self.occ_re_levels = dict(dataset.occurrence.random_effects)
        self.occ_re_n = dict(dataset.occurrence.n_levels)
        self.timing = defaultdict(float)
        self.block = "init"

        self.sources = []
        for s in dataset.sources:
            cj, ck = np.nonzero(s.detection.mask)
            self.sources.append(_Source(
                sid=s.source_id,
                site=s.site_map[cj],
                cell_j=cj, cell_k=ck,
                V=np.ascontiguousarray(s.design.X[cj, ck], dtype=float),
                y=s.detection.y[:, cj, ck].astype(float),
                re_levels={k: v[cj, ck] for k, v in s.design.random_effects.items()},
                re_n=dict(s.design.n_levels),
                shape=s.detection.mask.shape,
                n_sites=s.n_sites,
            ))
        self._refresh_detected()

        self.graph = None
        self.processes = []
        if self.spatial:
            coords = dataset.sites.coords
            self.phi_bounds = phi_bounds or self.priors.phi_bounds(coords)
            if spec.gp == "nngp":
                self.graph = graph or build_neighbor_graph(coords, spec.n_neighbors)
            self._coords = coords
        self._init_state()

    # -- helpers ---------------------------------------------------------

    def _refresh_detected(self):
        det = np.zeros((self.N, self.J), dtype=bool)
        for src in self.sources:
            for i in range(self.N):
                hit = src.site[src.y[i] > 0]
                det[i, hit] = True
        self.detected = det

    def _new_process(self, phi, nu):
        if self.spec.gp == "nngp":
            return NNGPProcess(self.graph, self.spec.kernel, phi, nu)
        return DenseProcess(self._coords, self.spec.kernel, phi, nu)

    def _occ_offset(self, i, skip=None):
        off = np.zeros(self.J)
        if self.spatial:
            off += self.w[i]
        for name, lv in self.occ_re_levels.items():
            if name != skip:
                off += self.occ_re[name][i][lv]
        return off

    def _det_offset(self, src, i, skip=None):
        off = np.zeros(src.V.shape[0])
        for name, lv in src.re_levels.items():
            if name != skip:
                off += src.re[name][i][lv]
        return off

    def occurrence_eta(self):
        return np.stack([self.X @ self.beta[i] + self._occ_offset(i) for i in range(self.N)])

    def detection_eta(self, src):
        return np.stack([src.V @ src.alpha[i] + self._det_offset(src, i) for i in range(self.N)])

    def _ig_mean(self, ab):
        a, b = ab
        return b / (a - 1) if a > 1 else b

    # -- initialization --------------------------------------------------

    def _init_state(self):
        N, J, pr = self.N, self.J, self.priors
        rng = self.rng
        self.beta = np.zeros((N, self.p_occ))
        for src in self.sources:
            src.alpha = np.zeros((N, src.V.shape[1]))
            for name, n in src.re_n.items():
                src.re[name] = np.zeros((N, n))
                src.re_var[name] = self._ig_mean(pr.re_var)
        self.occ_re = {k: np.zeros((N, n)) for k, n in self.occ_re_n.items()}
        self.occ_re_var = {k: self._ig_mean(pr.re_var) for k in self.occ_re_n}
        if self.community:
            q = self.sources[0].V.shape[1]
            self.mu_beta = np.zeros(self.p_occ)
            self.tau2_beta = np.full(self.p_occ, self._ig_mean(pr.tau2_beta))
            self.mu_alpha = np.zeros(q)
            self.tau2_alpha = np.full(q, self._ig_mean(pr.tau2_alpha))
        self.z = np.where(self.detected, 1, (rng.random((N, J)) < 0.5)).astype(np.int8)
        if self.spatial:
            self.w = np.zeros((N, J))
            self.sigma2 = np.full(N, self._ig_mean(pr.sigma2))
            self.phi = np.full(N, 0.5 * sum(self.phi_bounds))
            self.nu = np.full(N, 0.5 * sum(pr.nu) if self.spec.kernel == "matern" else 0.5)
            self.processes = [self._new_process(self.phi[i], self.nu[i]) for i in range(N)]
            self.steps = [{"phi": blocks.AdaptiveStep(), "nu": blocks.AdaptiveStep()}
                          for _ in range(N)]
        self._derive()

    def initialize_from_prior(self):
        """Draw every parameter and latent state from the prior (no data)."""
        rng, pr, N = self.rng, self.priors, self.N
        if self.community:
            q = self.sources[0].V.shape[1]
            self.mu_beta = pr.mu_beta_mean + math.sqrt(pr.mu_beta_var) * rng.standard_normal(self.p_occ)
            self.tau2_beta = pr.tau2_beta[1] / rng.gamma(pr.tau2_beta[0], size=self.p_occ)
            self.mu_alpha = pr.mu_alpha_mean + math.sqrt(pr.mu_alpha_var) * rng.standard_normal(q)
            self.tau2_alpha = pr.tau2_alpha[1] / rng.gamma(pr.tau2_alpha[0], size=q)
            self.beta = self.mu_beta + np.sqrt(self.tau2_beta) * rng.standard_normal((N, self.p_occ))
        else:
            self.beta = pr.beta_mean + math.sqrt(pr.beta_var) * rng.standard_normal((N, self.p_occ))
        for src in self.sources:
            q = src.V.shape[1]
            if self.community:
                src.alpha = self.mu_alpha + np.sqrt(self.tau2_alpha) * rng.standard_normal((N, q))
            else:
                src.alpha = pr.alpha_mean + math.sqrt(pr.alpha_var) * rng.standard_normal((N, q))
            for name, n in src.re_n.items():
                src.re_var[name] = pr.re_var[1] / rng.gamma(pr.re_var[0])
                src.re[name] = math.sqrt(src.re_var[name]) * rng.standard_normal((N, n))
        for name, n in self.occ_re_n.items():
            self.occ_re_var[name] = pr.re_var[1] / rng.gamma(pr.re_var[0])
            self.occ_re[name] = math.sqrt(self.occ_re_var[name]) * rng.standard_normal((N, n))
        if self.spatial:
            lo, hi = self.phi_bounds
            for i in range(N):
                self.sigma2[i] = pr.sigma2[1] / rng.gamma(pr.sigma2[0])
                self.phi[i] = rng.uniform(lo, hi)
                if self.spec.kernel == "matern":
                    self.nu[i] = rng.uniform(*pr.nu)
                self.processes[i] = self._new_process(self.phi[i], self.nu[i])
                self.w[i] = self.processes[i].draw_prior(self.sigma2[i], rng)
        self._derive()
        self.z = (rng.random((N, self.J)) < self.psi).astype(np.int8)
        self.resimulate_y()

    def resimulate_y(self):
        """Replace detections with draws from ``y ~ Bernoulli(p z)`` at the current state."""
        for src, p in zip(self.sources, self.p):
            zc = self.z[:, src.site]
            src.y = (self.rng.random(p.shape) < p * zc).astype(float)
        self._refresh_detected()

    # -- the sweep -------------------------------------------------------

    def _timed(self, name):
        self.block = name
        now = time.perf_counter()
        if getattr(self, "_t_last", None) is not None:
            self.timing[self._t_name] += now - self._t_last
        self._t_name, self._t_last = name, now

    def sweep(self, adapt=False):
        rng, pr, N = self.rng, self.priors, self.N
        self._timed("omega_beta")
        eta = self.occurrence_eta()
        omega_b = pg1_array(eta.ravel(), rng).reshape(eta.shape)
        kappa_z = self.z - 0.5

        self._timed("beta")
        for i in range(N):
            if self.community:
                m0, v0 = self.mu_beta, self.tau2_beta
            else:
                m0, v0 = pr.beta_mean, pr.beta_var
            self.beta[i] = blocks.update_coefficients(self.X, kappa_z[i], omega_b[i], m0, v0, rng,
                                                      offset=self._occ_offset(i))

        if self.occ_re_levels:
            self._timed("occ_random_effects")
            for name, lv in self.occ_re_levels.items():
                n = self.occ_re_n[name]
                for i in range(N):
                    off = self.X @ self.beta[i] + self._occ_offset(i, skip=name)
                    self.occ_re[name][i] = blocks.update_random_effects(
                        lv, n, omega_b[i], kappa_z[i], off, self.occ_re_var[name], rng)
                self.occ_re_var[name] = blocks.update_variance(self.occ_re[name], *pr.re_var, rng)

        if self.community:
            self._timed("community")
            self.mu_beta, self.tau2_beta = blocks.update_community(
                self.beta, pr.mu_beta_mean, pr.mu_beta_var, *pr.tau2_beta, self.tau2_beta, rng)
            self.mu_alpha, self.tau2_alpha = blocks.update_community(
                self.sources[0].alpha, pr.mu_alpha_mean, pr.mu_alpha_var, *pr.tau2_alpha,
                self.tau2_alpha, rng)

        for src in self.sources:
            self._timed("omega_alpha")
            active = self.z[:, src.site] == 1
            eta_d = self.detection_eta(src)
            omega_a = np.zeros_like(eta_d)
            omega_a[active] = pg1_array(eta_d[active], rng)
            kappa_y = src.y - 0.5
            self._timed("alpha")
            for i in range(N):
                act = active[i]
                if self.community:
                    m0, v0 = self.mu_alpha, self.tau2_alpha
                else:
                    m0, v0 = pr.alpha_mean, pr.alpha_var
                self.block = "alpha"
                src.alpha[i] = blocks.update_coefficients(
                    src.V[act], kappa_y[i, act], omega_a[i, act], m0, v0, rng,
                    offset=self._det_offset(src, i)[act])
            if src.re_levels:
                self._timed("det_random_effects")
                for name, lv in src.re_levels.items():
                    n = src.re_n[name]
                    for i in range(N):
                        act = active[i]
                        off = src.V @ src.alpha[i] + self._det_offset(src, i, skip=name)
                        src.re[name][i] = blocks.update_random_effects(
                            lv[act], n, omega_a[i, act], kappa_y[i, act], off[act],
                            src.re_var[name], rng)
                    src.re_var[name] = blocks.update_variance(src.re[name], *pr.re_var, rng)

        self._timed("z")
        psi = expit(self.occurrence_eta())
        log_q = np.zeros((N, self.J))
        for src in self.sources:
            p = expit(self.detection_eta(src))
            for i in range(N):
                # p == 1 gives -inf, i.e. an undetected site cannot be occupied
                with np.errstate(divide="ignore"):
                    log1mp = np.log1p(-p[i])
                log_q[i] += np.bincount(src.site, weights=log1mp, minlength=self.J)
        prob = blocks.occupancy_probability(psi, log_q, self.detected)
        self.z = (rng.random(prob.shape) < prob).astype(np.int8)

        if self.spatial:
            self._timed("w")
            kappa_z = self.z - 0.5
            for i in range(N):
                xb = self.X @ self.beta[i]
                self.processes[i].sample_w(self.w[i], self.sigma2[i], omega_b[i],
                                           kappa_z[i] - omega_b[i] * xb, rng)
                if self.has_intercept:
                    if self.community:
                        m0, v0 = self.mu_beta[0], self.tau2_beta[0]
                    else:
                        m0 = np.broadcast_to(pr.beta_mean, self.p_occ)[0]
                        v0 = np.broadcast_to(pr.beta_var, self.p_occ)[0]
                    self.beta[i, 0] = blocks.shift_intercept(
                        self.beta[i, 0], self.w[i], self.processes[i], self.sigma2[i], m0, v0,
                        rng)
            self._timed("theta")
            for i in range(N):
                self.sigma2[i], self.processes[i] = blocks.update_spatial_theta(
                    self.w[i], self.processes[i], self.sigma2[i], pr, self.phi_bounds,
                    self.steps[i], rng, adapt=adapt)
                self.phi[i] = self.processes[i].phi
                self.nu[i] = self.processes[i].nu
        self._timed("derive")
        self._derive()
        self._timed(None)
        self._t_last = None

    def _derive(self):
        self.psi = expit(self.occurrence_eta())
        self.p = [expit(self.detection_eta(src)) for src in self.sources]

    # -- output ----------------------------------------------------------

    def snapshot(self) -> dict:
        """Current values of every stored quantity (copies)."""
        out = {"beta": self.beta.copy(), "z": self.z.copy(), "psi": self.psi.copy()}
        for src, p in zip(self.sources, self.p):
            out[f"alpha.{src.sid}"] = src.alpha.copy()
            full = np.full((self.N,) + src.shape, np.nan)
            full[:, src.cell_j, src.cell_k] = p
            out[f"p.{src.sid}"] = full
            for name in src.re:
                out[f"re_det.{src.sid}.{name}"] = src.re[name].copy()
                out[f"sigma2_det.{src.sid}.{name}"] = np.array(src.re_var[name])
        for name in self.occ_re:
            out[f"re_occ.{name}"] = self.occ_re[name].copy()
            out[f"sigma2_occ.{name}"] = np.array(self.occ_re_var[name])
        if self.community:
            out["mu_beta"] = self.mu_beta.copy()
            out["tau2_beta"] = self.tau2_beta.copy()
            out["mu_alpha"] = self.mu_alpha.copy()
            out["tau2_alpha"] = self.tau2_alpha.copy()
        if self.spatial:
            out["w"] = self.w.copy()
            out["sigma2"] = self.sigma2.copy()
            out["phi"] = self.phi.copy()
            if self.spec.kernel == "matern":
                out["nu"] = self.nu.copy()
        return out

    def acceptance(self) -> dict:
        if not self.spatial:
            return {}
        out = {"phi": [s["phi"].acceptance for s in self.steps]}
        if self.spec.kernel == "matern":
            out["nu"] = [s["nu"].acceptance for s in self.steps]
        return out

    def check_invariants(self):
        """Assert z = 1 wherever a detection was observed."""
        if np.any(self.z[self.detected] != 1):
            raise AssertionError("latent occupancy is 0 at a site with a detection")
