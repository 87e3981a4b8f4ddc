"""Posterior predictive occurrence at new sites.

Nonspatial prediction pushes each draw of ``beta`` through the new design.
Spatial prediction additionally draws the spatial effect at each new site
from its conditional normal given the fitted sites' effects (composition
sampling), either from the ``m`` nearest fitted sites (NNGP) or from all of
them (full GP). New sites are conditionally independent given the fitted
effects.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial import cKDTree
from scipy.special import expit

from .chains import PosteriorChains
from .data import Dataset
from .draws import rng_stream
from .spatial import correlation, pairwise_distances

__all__ = ["Prediction", "predict_nonspatial", "predict_spatial", "detection_probability",
           "write_predictions"]

_JITTER = 1e-8
_PREDICT_STREAM = 101


@dataclass
class Prediction:
    """Draws at new sites, each shaped ``(n_draws, n_species, n_new)``."""

    psi: np.ndarray
    z: np.ndarray
    w: np.ndarray | None = None

    def richness(self) -> np.ndarray:
        """Per-draw number of occupied species at each new site, ``(n_draws, n_new)``."""
        return self.z.sum(axis=1)


def _rng(chains, seed):
    return rng_stream(chains.spec.seed if seed is None else seed, 0, _PREDICT_STREAM)


def _check_columns(chains: PosteriorChains, X_new):
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    p = chains["beta"].shape[-1]
    if X_new.shape[1] != p:
        raise ValueError(f"prediction design has {X_new.shape[1]} columns, the fit has {p}")
    if not np.all(np.isfinite(X_new)):
        raise ValueError("prediction design has non-finite entries")
    return X_new


def _occ_re(chains, occ_levels):
    out = 0.0
    for name, lv in (occ_levels or {}).items():
        eff = chains.pooled(f"re_occ.{name}")
        out = out + eff[:, :, np.asarray(lv)]
    return out


def predict_nonspatial(chains: PosteriorChains, X_new, seed=None, occ_levels=None) -> Prediction:
    """``psi* = expit(X_new beta_d)`` and ``z* ~ Bernoulli(psi*)`` for every pooled draw.

    ``occ_levels`` maps occurrence random-effect names to level codes of
    the new rows; the fitted level effects are added.
    """
    X_new = _check_columns(chains, X_new)
    beta = chains.pooled("beta")                       # (D, N, p)
    eta = np.einsum("dip,np->din", beta, X_new) + _occ_re(chains, occ_levels)
    psi = expit(eta)
    z = (_rng(chains, seed).random(psi.shape) < psi).astype(np.int8)
    return Prediction(psi, z)


def _neighbor_sets(coords, coords_new, m):
    tree = cKDTree(coords)
    k = min(m, coords.shape[0])
    d, idx = tree.query(coords_new, k=k)
    return np.asarray(idx).reshape(len(coords_new), k), np.asarray(d).reshape(len(coords_new), k)


def predict_spatial(chains: PosteriorChains, dataset: Dataset, X_new, coords_new, gp=None,
                    m=None, seed=None) -> Prediction:
    """Spatial prediction at ``coords_new``.

    Parameters
    ----------
    chains : PosteriorChains
        A spatial fit (stores ``w``, ``sigma2``, ``phi`` and, for Matern, ``nu``).
    dataset : Dataset
        The training data; its coordinates index the stored ``w``.
    gp : {"nngp", "full"}, optional
        Conditioning set: the ``m`` nearest fitted sites or all of them.
        Defaults to the fit's mode; ``m`` defaults to the fit's neighbor count.
    """
    spec = chains.spec
    if not spec.spatial:
        raise ValueError("chains come from a nonspatial fit")
    X_new = _check_columns(chains, X_new)
    coords_new = np.atleast_2d(np.asarray(coords_new, dtype=float))
    if coords_new.shape != (X_new.shape[0], 2) or not np.all(np.isfinite(coords_new)):
        raise ValueError("new coordinates must be finite and match the design rows")
    gp = gp or spec.gp
    m = m or spec.n_neighbors
    coords = dataset.sites.coords
    rng = _rng(chains, seed)

    beta = chains.pooled("beta")
    w = chains.pooled("w")                            # (D, N, J)
    sigma2 = chains.pooled("sigma2")
    phi = chains.pooled("phi")
    nu = chains.pooled("nu") if "nu" in chains.draws else np.full_like(phi, 0.5)
    D, N, _ = w.shape
    n_new = coords_new.shape[0]

    if gp == "nngp":
        idx, d_new = _neighbor_sets(coords, coords_new, m)
    else:
        idx = np.broadcast_to(np.arange(coords.shape[0]), (n_new, coords.shape[0]))
        d_new = pairwise_distances(coords_new, coords)
    same = d_new[:, 0] == 0 if gp == "nngp" else (d_new == 0).any(axis=1)
    same_site = idx[np.arange(n_new), np.argmin(d_new, axis=1)]
    d_nn = (np.linalg.norm(coords[idx][:, :, None, :] - coords[idx][:, None, :, :], axis=-1)
            if gp == "nngp" else None)
    d_full = pairwise_distances(coords) if gp == "full" else None

    w_new = np.empty((D, N, n_new))
    for d in range(D):
        for i in range(N):
            kern = (spec.kernel, phi[d, i], nu[d, i])
            c_new = correlation(*kern, d_new)
            if gp == "nngp":
                C = correlation(*kern, d_nn)
                C[:, np.arange(C.shape[1]), np.arange(C.shape[1])] += _JITTER
                b = np.linalg.solve(C, c_new[..., None])[..., 0]
                mean = np.einsum("nk,nk->n", b, w[d, i][idx])
                var = 1.0 + _JITTER - np.einsum("nk,nk->n", b, c_new)
            else:
                R = correlation(*kern, d_full)
                R[np.diag_indices_from(R)] += _JITTER
                cf = cho_factor(R, lower=True)
                b = cho_solve(cf, c_new.T).T
                mean = b @ w[d, i]
                var = 1.0 + _JITTER - np.einsum("nk,nk->n", b, c_new)
            sd = np.sqrt(np.maximum(var, 0.0) * sigma2[d, i])
            w_new[d, i] = mean + sd * rng.standard_normal(n_new)
            w_new[d, i, same] = w[d, i, same_site[same]]
    eta = np.einsum("dip,np->din", beta, X_new) + w_new
    psi = expit(eta)
    z = (rng.random(psi.shape) < psi).astype(np.int8)
    return Prediction(psi, z, w_new)


def detection_probability(chains: PosteriorChains, source, V, re_levels=None) -> np.ndarray:
    """Pooled detection probabilities ``(D, N, ...)`` for design ``V`` (..., q) of one source."""
    alpha = chains.pooled(f"alpha.{source}")          # (D, N, q)
    eta = np.einsum("diq,...q->di...", alpha, np.asarray(V, dtype=float))
    for name, lv in (re_levels or {}).items():
        eff = chains.pooled(f"re_det.{source}.{name}")
        eta = eta + eff[:, :, np.asarray(lv)]
    return expit(eta)


def _summ(a, axis=0):
    return (a.mean(axis), a.std(axis, ddof=1) if a.shape[axis] > 1 else np.zeros(a.shape[1:]),
            np.quantile(a, 0.025, axis=axis), np.quantile(a, 0.975, axis=axis))


def write_predictions(path, coords, pred: Prediction, species=("species",), site_ids=None) -> list:
    """Write per-site summaries of ``psi`` and ``z``; for several species also species richness.

    Columns: ``site_id,x,y[,species],psi_mean,psi_sd,psi_q2.5,psi_q97.5,z_mean``.
    Richness goes to ``<stem>_richness.csv`` with ``site_id,x,y,richness_mean,richness_sd``.
    """
    path = Path(path)
    n = coords.shape[0]
    site_ids = np.arange(n) if site_ids is None else site_ids
    mean, sd, lo, hi = _summ(pred.psi)
    zm = pred.z.mean(axis=0)
    multi = len(species) > 1
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["site_id", "x", "y"] + (["species"] if multi else [])
                    + ["psi_mean", "psi_sd", "psi_q2.5", "psi_q97.5", "z_mean"])
        for i, sp in enumerate(species):
            for j in range(n):
                wr.writerow([int(site_ids[j]), repr(float(coords[j, 0])), repr(float(coords[j, 1]))]
                            + ([sp] if multi else [])
                            + [repr(float(v)) for v in (mean[i, j], sd[i, j], lo[i, j], hi[i, j],
                                                        zm[i, j])])
    out = [path]
    if multi:
        rich = pred.richness().astype(float)
        rp = path.with_name(path.stem + "_richness.csv")
        with open(rp, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["site_id", "x", "y", "richness_mean", "richness_sd"])
            rsd = rich.std(0, ddof=1) if rich.shape[0] > 1 else np.zeros(n)
            for j in range(n):
                wr.writerow([int(site_ids[j]), repr(float(coords[j, 0])), repr(float(coords[j, 1])),
                             repr(float(rich[:, j].mean())), repr(float(rsd[j]))])
        out.append(rp)
    return out

