"""Model assessment: WAIC, posterior predictive checks, k-fold cross-validation
deviance, split-chain R-hat and posterior summaries.

The likelihood unit for WAIC and cross-validation is one (species, site)
with latent occupancy summed out:

    L = psi * prod_k p^y (1 - p)^(1 - y) + (1 - psi) * 1[no detection]

where the product runs over every surveyed replicate of every source mapped
to the site.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .chains import PosteriorChains
from .data import ConfigError, Dataset, ModelSpec
from .draws import rng_stream
from .predict import detection_probability, predict_nonspatial, predict_spatial
from .samplers import fit

__all__ = [
    "WaicResult", "PpcResult", "CvResult", "AssessmentReport", "site_loglik", "waic", "ppc",
    "kfold_cv", "fold_assignment", "rhat", "rhat_array", "summary", "format_summary",
]

_PPC_STREAM = 202
STATISTICS = ("chisq", "ftukey")
BINNINGS = ("site", "replicate")


# ---------------------------------------------------------------------------
# Marginal site likelihood
# ---------------------------------------------------------------------------

def site_loglik(psi, p_by_source, dataset: Dataset):
    """Log marginal likelihood per draw and unit.

    Parameters
    ----------
    psi : array (D, N, J)
    p_by_source : list of arrays (D, N, J_s, K_s), one per source of ``dataset``
    dataset : Dataset

    Returns
    -------
    loglik : array (D, N, J)
    covered : bool array (J,)
        Sites with at least one surveyed replicate; the others have ``L = 1``.
    """
    psi = np.asarray(psi, dtype=float)
    D, N, J = psi.shape
    ll_det = np.zeros((D, N, J))
    detected = np.zeros((N, J), dtype=bool)
    covered = np.zeros(J, dtype=bool)
    for src, p in zip(dataset.sources, p_by_source):
        mask = src.detection.mask
        y = src.detection.y.astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(mask, y * np.log(p) + (1 - y) * np.log1p(-p), 0.0)
        per_site = term.sum(axis=-1)                                  # (D, N, J_s)
        np.add.at(ll_det, (slice(None), slice(None), src.site_map), per_site)
        detected[:, src.site_map] |= (y * mask).sum(-1) > 0
        covered[src.site_map] |= mask.any(-1)
    with np.errstate(divide="ignore"):
        occ = np.log(psi) + ll_det
        empty = np.where(detected, -np.inf, np.log1p(-psi))
    return np.logaddexp(occ, empty), covered


def _chain_p(chains: PosteriorChains, dataset: Dataset):
    return [chains.pooled(f"p.{s.source_id}") for s in dataset.sources]


def _check_hash(chains: PosteriorChains, dataset: Dataset):
    if chains.data_hash != dataset.hash():
        raise ConfigError("chains were fitted to a different dataset (data hash mismatch)")


# ---------------------------------------------------------------------------
# WAIC
# ---------------------------------------------------------------------------

@dataclass
class WaicResult:
    elpd: float
    pD: float
    waic: float
    by_species: list = field(default_factory=list)


def waic_from_loglik(loglik) -> WaicResult:
    """WAIC from per-draw log-likelihoods ``(D, ...)``; units are all trailing entries."""
    ll = np.asarray(loglik, dtype=float)
    D = ll.shape[0]
    lppd = logsumexp(ll, axis=0) - np.log(D)
    pd = ll.var(axis=0, ddof=1) if D > 1 else np.zeros(ll.shape[1:])
    if not np.all(np.isfinite(lppd)):
        raise FloatingPointError("zero posterior mean likelihood at some unit")
    elpd, pD = float(lppd.sum()), float(pd.sum())
    by = []
    if ll.ndim == 3:
        for i in range(ll.shape[1]):
            e, q = float(lppd[i].sum()), float(pd[i].sum())
            by.append({"elpd": e, "pD": q, "waic": -2 * (e - q)})
    return WaicResult(elpd, pD, -2.0 * (elpd - pD), by)


def waic(chains: PosteriorChains, dataset: Dataset) -> WaicResult:
    """WAIC with the site (per species) as the likelihood unit, occupancy marginalized.

    ``elpd = sum_j log mean_d L_jd``, ``pD = sum_j var_d log L_jd`` (sample
    variance) and ``waic = -2 (elpd - pD)``. Log-sum-exp keeps the mean
    likelihood from underflowing.
    """
    _check_hash(chains, dataset)
    ll, covered = site_loglik(chains.pooled("psi"), _chain_p(chains, dataset), dataset)
    return waic_from_loglik(ll[:, :, covered])


# ---------------------------------------------------------------------------
# Posterior predictive checks
# ---------------------------------------------------------------------------

@dataclass
class PpcResult:
    statistic: str
    binning: str
    fit_y: np.ndarray
    fit_y_rep: np.ndarray
    bayesian_p: float
    by_group: dict = field(default_factory=dict)

    def to_dict(self):
        return {"statistic": self.statistic, "binning": self.binning,
                "bayesian_p": self.bayesian_p, "by_group": self.by_group,
                "fit_y_mean": float(np.mean(self.fit_y)),
                "fit_y_rep_mean": float(np.mean(self.fit_y_rep))}


def _discrepancy(obs, exp, statistic):
    if statistic == "chisq":
        return ((obs - exp) ** 2 / np.maximum(exp, 1e-6)).sum(axis=-1)
    return ((np.sqrt(obs) - np.sqrt(exp)) ** 2).sum(axis=-1)


def _bin(a, mask, binning):
    # a: (..., J_s, K) -> binned counts (..., n_bins)
    a = np.where(mask, a, 0.0)
    return a.sum(axis=-1) if binning == "site" else a.sum(axis=-2)


def ppc(chains: PosteriorChains, dataset: Dataset, statistic="chisq", binning="site",
        seed=None, z_mode="posterior", replicate=None) -> PpcResult:
    """Posterior predictive check with a Bayesian p-value.

    For each draw ``d`` replicate data ``y_rep ~ Bernoulli(p_d z_d)`` are
    simulated, observed and replicated data are binned by site (sum over
    replicates) or by replicate (sum over sites), and a discrepancy
    against the expected bin counts ``E = sum p_d z_d`` is computed:
    chi-square ``sum (obs - E)^2 / E`` (``E`` floored at 1e-6) or
    Freeman-Tukey ``sum (sqrt(obs) - sqrt(E))^2``.
    ``bayesian_p = mean_d 1[T(y_rep) > T(y)]``.

    Parameters
    ----------
    z_mode : {"posterior", "marginal"}
        Use the stored occupancy draws, or redraw ``z ~ Bernoulli(psi_d)``.
    replicate : callable, optional
        ``replicate(y, prob, rng) -> y_rep`` overrides the simulation of
        replicate data (``y`` is ``(N, J_s, K)``, ``prob`` is ``(D, N, J_s, K)``).

    The discrepancy is summed over species and sources; ``by_group`` holds
    p-values per species (and per source for integrated models).
    """
    if statistic not in STATISTICS:
        raise ConfigError(f"statistic must be one of {STATISTICS}")
    if binning not in BINNINGS:
        raise ConfigError(f"binning must be one of {BINNINGS}")
    _check_hash(chains, dataset)
    rng = rng_stream(chains.spec.seed if seed is None else seed, 0, _PPC_STREAM)
    z = chains.pooled("z").astype(float)
    if z_mode == "marginal":
        z = (rng.random(z.shape) < chains.pooled("psi")).astype(float)
    elif z_mode != "posterior":
        raise ConfigError("z_mode must be 'posterior' or 'marginal'")
    D, N, _ = z.shape
    t_obs = np.zeros((D, N, len(dataset.sources)))
    t_rep = np.zeros_like(t_obs)
    for s, (src, p) in enumerate(zip(dataset.sources, _chain_p(chains, dataset))):
        mask = src.detection.mask
        prob = np.where(mask, np.nan_to_num(p), 0.0) * z[:, :, src.site_map, None]
        y = src.detection.y.astype(float)
        if replicate is None:
            y_rep = (rng.random(prob.shape) < prob).astype(float)
        else:
            y_rep = np.asarray(replicate(y, prob, rng), dtype=float)
        exp_b = _bin(prob, mask, binning)
        t_obs[:, :, s] = _discrepancy(_bin(y[None], mask, binning), exp_b, statistic)
        t_rep[:, :, s] = _discrepancy(_bin(y_rep, mask, binning), exp_b, statistic)
    by = {}
    for i, sp in enumerate(chains.species):
        by[str(sp)] = float(np.mean(t_rep[:, i].sum(-1) > t_obs[:, i].sum(-1)))
        if len(dataset.sources) > 1:
            for s, src in enumerate(dataset.sources):
                by[f"{sp}/{src.source_id}"] = float(np.mean(t_rep[:, i, s] > t_obs[:, i, s]))
    fy, fr = t_obs.sum(axis=(1, 2)), t_rep.sum(axis=(1, 2))
    return PpcResult(statistic, binning, fy, fr, float(np.mean(fr > fy)), by)


# ---------------------------------------------------------------------------
# k-fold cross-validation
# ---------------------------------------------------------------------------

@dataclass
class CvResult:
    folds: np.ndarray
    deviance: np.ndarray
    total: float

    def to_dict(self):
        return {"k": int(self.deviance.size), "folds": self.folds.tolist(),
                "deviance": self.deviance.tolist(), "total": self.total}


def fold_assignment(n_sites: int, k: int, seed: int) -> np.ndarray:
    """Uniformly random partition of sites into ``k`` folds of near-equal size."""
    if not 2 <= k <= n_sites:
        raise ConfigError(f"need 2 <= k <= J, got k={k}, J={n_sites}")
    perm = np.random.default_rng(seed).permutation(n_sites)
    folds = np.empty(n_sites, dtype=np.int64)
    folds[perm] = np.arange(n_sites) % k
    return folds


def heldout_loglik(chains: PosteriorChains, train: Dataset, test: Dataset, seed=None):
    """Per-draw marginal log-likelihood ``(D, N, J_test)`` at held-out sites."""
    X = test.occurrence.X
    if chains.spec.spatial:
        pred = predict_spatial(chains, train, X, test.sites.coords, seed=seed)
    else:
        pred = predict_nonspatial(chains, X, seed=seed,
                                  occ_levels=test.occurrence.random_effects or None)
    ps = [detection_probability(chains, s.source_id, s.design.X, s.design.random_effects or None)
          for s in test.sources]
    return site_loglik(pred.psi, ps, test)


def kfold_cv(spec: ModelSpec, dataset: Dataset, k: int, seed: int | None = None,
             threads: int = 1) -> CvResult:
    """k-fold cross-validation deviance over a random partition of sites.

    Each fold is held out in turn, the model is refitted to the remaining
    sites, and the held-out deviance ``-2 sum_j log mean_d L_jd`` is
    evaluated at predicted occurrence (spatial prediction for spatial
    models). Folds run on ``threads`` workers.
    """
    seed = spec.seed if seed is None else seed
    folds = fold_assignment(dataset.n_sites, k, seed)
    for f in range(k):
        if not np.any(folds == f):
            raise ConfigError(f"fold {f} has no sites")

    def one(f):
        train = dataset.subset(np.flatnonzero(folds != f))
        test = dataset.subset(np.flatnonzero(folds == f))
        ch = fit(spec.replace(seed=seed + 1000 * (f + 1)), train)
        ll, covered = heldout_loglik(ch, train, test, seed=seed + f)
        ll = ll[:, :, covered]
        if ll.size == 0:
            return 0.0
        lppd = logsumexp(ll, axis=0) - np.log(ll.shape[0])
        return float(-2.0 * lppd.sum())

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            dev = list(pool.map(one, range(k)))
    else:
        dev = [one(f) for f in range(k)]
    dev = np.asarray(dev)
    return CvResult(folds, dev, float(dev.sum()))


# ---------------------------------------------------------------------------
# Convergence and summaries
# ---------------------------------------------------------------------------

def rhat_array(draws) -> float:
    """Split-chain potential scale reduction for draws shaped ``(n_chains, n_draws)``.

    Every chain is cut into two halves; with ``n`` draws per half,
    ``rhat = sqrt(((n - 1) / n * W + B / n) / W)``. Zero within-segment
    variance gives 1 when the segments also agree and infinity otherwise.
    """
    a = np.atleast_2d(np.asarray(draws, dtype=float))
    n = a.shape[1] // 2
    if n < 2:
        raise ValueError("fewer than 2 draws per split segment")
    seg = np.concatenate([a[:, :n], a[:, a.shape[1] - n:]], axis=0)
    if seg.shape[0] < 2:
        raise ValueError("fewer than 2 effective segments")
    means = seg.mean(axis=1)
    W = seg.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    scale = max(np.abs(means).max(), 1.0)
    if W <= 1e-300 * scale:
        return 1.0 if B <= 1e-24 * scale * scale * n else float("inf")
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def rhat(chains: PosteriorChains) -> dict:
    """R-hat for every scalar parameter (label -> value)."""
    return {k: rhat_array(v) for k, v in chains.scalar_draws().items()}


def summary(chains: PosteriorChains, quantiles=(0.025, 0.5, 0.975), with_rhat=None) -> dict:
    """Posterior mean, SD and quantiles per scalar parameter (R-hat with >= 2 chains)."""
    with_rhat = chains.n_chains >= 2 if with_rhat is None else with_rhat
    out = {}
    for label, v in chains.scalar_draws().items():
        flat = v.ravel()
        row = {"mean": float(flat.mean()),
               "sd": float(flat.std(ddof=1)) if flat.size > 1 else 0.0}
        for q in quantiles:
            row[f"q{100 * q:g}"] = float(np.quantile(flat, q))
        if with_rhat and v.shape[1] >= 4:
            row["rhat"] = rhat_array(v)
        out[label] = row
    return out


def format_summary(table: dict) -> str:
    """Plain-text table of :func:`summary` output."""
    if not table:
        return ""
    cols = list(next(iter(table.values())))
    width = max(len(k) for k in table) + 2
    lines = ["parameter".ljust(width) + "".join(c.rjust(10) for c in cols)]
    for k, row in table.items():
        lines.append(k.ljust(width) + "".join(f"{row[c]:10.4f}" for c in cols))
    return "\n".join(lines)


@dataclass
class AssessmentReport:
    spec_hash: str
    data_hash: str
    waic: WaicResult | None = None
    ppc: list = field(default_factory=list)
    rhat: dict = field(default_factory=dict)
    cv: CvResult | None = None

    def to_dict(self):
        return {
            "spec_hash": self.spec_hash,
            "data_hash": self.data_hash,
            "waic": None if self.waic is None else asdict(self.waic),
            "ppc": [p.to_dict() for p in self.ppc],
            "rhat": self.rhat,
            "cv": None if self.cv is None else self.cv.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"
