"""Simulated detection-nondetection data for single-species, multispecies and
integrated occupancy models, with an optional spatial random intercept.

Every generator returns a :class:`Simulation` holding the dataset and a
truth record (all generative values, including ``w``, ``z``, ``psi`` and
``p``) that is enough to recompute the probabilities exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import ConfigError, Dataset, ModelSpec, make_dataset, write_dataset
from .spatial import DenseProcess, NNGPProcess, build_neighbor_graph

__all__ = ["SpatialSim", "Simulation", "sim_occ", "sim_ms_occ", "sim_int_occ", "preset",
           "site_coordinates"]

DENSE_LIMIT = 10_000


@dataclass(frozen=True)
class SpatialSim:
    """Generative spatial process. ``gp`` is ``"auto"``, ``"full"`` or ``"nngp"``;
    auto uses the dense process up to 10,000 sites and an NNGP with 15
    neighbors above that (an approximation)."""

    kernel: str = "exponential"
    sigma2: float = 1.0
    phi: float = 3.0
    nu: float = 0.5
    gp: str = "auto"
    n_neighbors: int = 15


@dataclass
class Simulation:
    dataset: Dataset
    truth: dict

    def write(self, path, spec: ModelSpec | None = None) -> Path:
        """Write the dataset bundle plus ``truth.json``."""
        out = write_dataset(self.dataset, path, spec)
        (Path(path) / "truth.json").write_text(json.dumps(_jsonable(self.truth), indent=1) + "\n")
        return out


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def site_coordinates(J: int, layout: str, extent: float, rng) -> np.ndarray:
    """Uniform random points on ``[0, extent]^2`` or cell centers of a square grid."""
    if layout == "uniform":
        return rng.uniform(0, extent, size=(J, 2))
    if layout == "grid":
        n = math.ceil(math.sqrt(J))
        h = extent / n
        g = (np.arange(n) + 0.5) * h
        xx, yy = np.meshgrid(g, g, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])[:J]
    raise ConfigError(f"unknown layout {layout!r}")


def _spatial_effect(coords, sp: SpatialSim, rng) -> np.ndarray:
    J = coords.shape[0]
    gp = sp.gp if sp.gp != "auto" else ("full" if J <= DENSE_LIMIT else "nngp")
    if gp == "full":
        proc = DenseProcess(coords, sp.kernel, sp.phi, sp.nu)
    else:
        proc = NNGPProcess(build_neighbor_graph(coords, min(sp.n_neighbors, max(J - 1, 1))),
                           sp.kernel, sp.phi, sp.nu)
    return proc.draw_prior(sp.sigma2, rng)


def _replicates(K, n_sites, rng):
    """Per-site replicate counts from an int, a (lo, hi) range or an array."""
    if np.isscalar(K):
        k = np.full(n_sites, int(K))
    elif len(K) == 2 and n_sites != 2:
        k = rng.integers(int(K[0]), int(K[1]) + 1, size=n_sites)
    else:
        k = np.asarray(K, dtype=int)
    if k.shape != (n_sites,) or np.any(k < 1):
        raise ConfigError("replicate counts must be >= 1 for every site")
    return k


def _covariates(prefix, n, shape, rng):
    return {f"{prefix}{c + 1}": rng.standard_normal(shape) for c in range(n)}


def _design(covs, shape):
    return np.stack([np.ones(shape)] + list(covs.values()), axis=-1)


def _core(J, betas, sources, spatial, rng, layout, extent, det_re, species_names):
    """Shared generator. ``betas`` (N, p); ``sources`` list of (n_sites, K, alphas (N, q))."""
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    N, p = betas.shape
    if J < 1 or N < 1:
        raise ConfigError("J and N must be positive")
    coords = site_coordinates(J, layout, extent, rng)
    occ_covs = _covariates("occ_cov", p - 1, (J,), rng)
    X = _design(occ_covs, (J,))
    w = np.zeros((N, J))
    if spatial is not None:
        for i in range(N):
            w[i] = _spatial_effect(coords, spatial, rng)
    psi = expit(X @ betas.T + w.T).T
    z = (rng.random((N, J)) < psi).astype(np.int8)

    built, src_truth = [], []
    for s, (n_sites, K, alphas) in enumerate(sources):
        alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
        if n_sites > J:
            raise ConfigError(f"source {s + 1} has {n_sites} sites but only {J} exist")
        site_map = np.arange(J) if n_sites == J else np.sort(rng.choice(J, n_sites, replace=False))
        k = _replicates(K, n_sites, rng)
        Kmax = int(k.max())
        mask = np.arange(Kmax)[None, :] < k[:, None]
        q = alphas.shape[1]
        det_covs = {name: np.where(mask, v, 0.0)
                    for name, v in _covariates("det_cov", q - 1, (n_sites, Kmax), rng).items()}
        V = _design(det_covs, (n_sites, Kmax))
        eta = np.einsum("jkq,iq->ijk", V, alphas)
        re_truth = {}
        for name, (n_levels, var) in (det_re or {}).items():
            lv = np.where(mask, rng.integers(0, n_levels, size=(n_sites, Kmax)), 0)
            eff = math.sqrt(var) * rng.standard_normal((N, n_levels))
            eta = eta + eff[:, lv]
            det_covs[name] = lv
            re_truth[name] = {"levels": n_levels, "variance": var, "effects": eff}
        pdet = np.where(mask[None], expit(eta), 0.0)
        y = ((rng.random(pdet.shape) < pdet * z[:, site_map, None]) & mask[None]).astype(np.int8)
        sid = str(s + 1)
        built.append((sid, y, mask, det_covs, site_map))
        src_truth.append({"source_id": sid, "alpha": alphas, "site_map": site_map, "p": pdet,
                          "replicates": k, "random_effects": re_truth})
    ds = make_dataset(coords, occ_covs, built, species=tuple(species_names),
                      det_random=tuple(det_re or ()))
    truth = {"beta": betas, "psi": psi, "z": z, "coords": coords, "sources": src_truth,
             "w": w if spatial is not None else None,
             "spatial": None if spatial is None else {
                 "kernel": spatial.kernel, "sigma2": spatial.sigma2, "phi": spatial.phi,
                 "nu": spatial.nu, "gp": spatial.gp}}
    return Simulation(ds, truth)


def sim_occ(J, K, beta, alpha, spatial: SpatialSim | None = None, seed=None, *,
            layout="uniform", extent=1.0, det_re=None) -> Simulation:
    """Single-species data.

    Parameters
    ----------
    J : int
        Number of sites.
    K : int, (lo, hi) or array
        Replicates per site: fixed, uniform on ``lo..hi``, or given per site.
    beta, alpha : sequence of float
        Occurrence and detection coefficients, intercept first. One standard
        normal covariate is drawn per remaining coefficient.
    spatial : SpatialSim, optional
    det_re : dict, optional
        ``name -> (n_levels, variance)`` detection random intercepts.
    """
    rng = _rng(seed)
    sim = _core(J, [beta], [(J, K, [alpha])], spatial, rng, layout, extent, det_re, ("species",))
    _flatten_single(sim.truth)
    return sim


def _flatten_single(truth):
    truth["beta"] = truth["beta"][0]
    truth["psi"] = truth["psi"][0]
    truth["z"] = truth["z"][0]
    if truth["w"] is not None:
        truth["w"] = truth["w"][0]
    for s in truth["sources"]:
        s["alpha"] = s["alpha"][0]
        s["p"] = s["p"][0]
    if len(truth["sources"]) == 1:
        truth["alpha"] = truth["sources"][0]["alpha"]
        truth["p"] = truth["sources"][0]["p"]


def sim_ms_occ(J, K, N, mu_beta, tau2_beta, mu_alpha, tau2_alpha,
               spatial: SpatialSim | None = None, seed=None, *, layout="uniform", extent=1.0,
               det_re=None) -> Simulation:
    """Multispecies data: species coefficients from ``Normal(mu, tau2)`` per coefficient.

    Spatial effects, when requested, are independent across species with the
    same covariance parameters.
    """
    rng = _rng(seed)
    mu_beta, mu_alpha = np.asarray(mu_beta, float), np.asarray(mu_alpha, float)
    betas = mu_beta + np.sqrt(np.broadcast_to(tau2_beta, mu_beta.shape)) * rng.standard_normal(
        (N, mu_beta.size))
    alphas = mu_alpha + np.sqrt(np.broadcast_to(tau2_alpha, mu_alpha.shape)) * rng.standard_normal(
        (N, mu_alpha.size))
    names = tuple(f"sp{i + 1}" for i in range(N))
    sim = _core(J, betas, [(J, K, alphas)], spatial, rng, layout, extent, det_re, names)
    t = sim.truth
    t.update(mu_beta=mu_beta, tau2_beta=np.broadcast_to(tau2_beta, mu_beta.shape).copy(),
             mu_alpha=mu_alpha, tau2_alpha=np.broadcast_to(tau2_alpha, mu_alpha.shape).copy(),
             alpha=t["sources"][0]["alpha"], p=t["sources"][0]["p"])
    return sim


def sim_int_occ(J, sources, beta, spatial: SpatialSim | None = None, seed=None, *,
                layout="uniform", extent=1.0, det_re=None) -> Simulation:
    """Integrated single-species data from several detection sources.

    ``sources`` is a list of ``(J_s, K_s, alpha_s)``; each source surveys
    ``J_s`` sites chosen uniformly without replacement and has its own
    detection model. All sources share one occurrence surface.
    """
    rng = _rng(seed)
    srcs = [(int(n), K, [a]) for n, K, a in sources]
    sim = _core(J, [beta], srcs, spatial, rng, layout, extent, det_re, ("species",))
    _flatten_single(sim.truth)
    return sim


def preset(name: str, scale: float = 1.0, seed=None) -> tuple:
    """Named simulation setups; returns ``(Simulation, ModelSpec)``.

    ``iom-40k``: spatial integrated model on a square grid of
    ``40,000 * scale`` sites with three sources covering 62.5%, 37.5% and
    12.5% of them, ``beta = (0, -0.5, 1)``, exponential process with
    ``sigma2 = 2`` and ``phi = 5`` on the unit square, three replicates per
    surveyed site, and a 5-neighbor NNGP fit.
    """
    if name != "iom-40k":
        raise ConfigError(f"unknown preset {name!r}")
    if not 0 < scale <= 1:
        raise ConfigError("scale must be in (0, 1]")
    J = int(round(40_000 * scale))
    sizes = [int(math.ceil(n * scale)) for n in (25_000, 15_000, 5_000)]
    alphas = [(-1.0, 0.4), (0.0, -0.5), (1.0, 0.8)]
    sim = sim_int_occ(J, [(n, 3, a) for n, a in zip(sizes, alphas)], (0.0, -0.5, 1.0),
                      SpatialSim("exponential", 2.0, 5.0), seed, layout="grid")
    spec = ModelSpec(model="iom", spatial=True, kernel="exponential", gp="nngp", n_neighbors=5,
                     n_iter=10_000, n_burn=5_000, n_thin=5, n_chains=1)
    return sim, spec
