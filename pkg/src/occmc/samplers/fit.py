"""Run chains of the occupancy Gibbs sampler and collect their draws."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..chains import PosteriorChains
from ..data import ConfigError, Dataset, ModelSpec, check
from ..draws import rng_stream
from ..spatial import build_neighbor_graph
from .engine import NumericalError, OccupancySampler

__all__ = [
    "fit", "run_chain", "fit_ssom", "fit_sp_ssom", "fit_msom", "fit_sp_msom", "fit_iom",
    "fit_sp_iom",
]

_NUMERICAL = (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError, OverflowError)


def _finite_state(s: OccupancySampler) -> bool:
    ok = np.isfinite(s.beta).all() and all(np.isfinite(src.alpha).all() for src in s.sources)
    if s.spatial:
        ok = ok and np.isfinite(s.w).all() and np.isfinite(s.sigma2).all()
    return bool(ok)


def run_chain(dataset: Dataset, spec: ModelSpec, chain: int = 0, graph=None, phi_bounds=None,
              progress=None) -> tuple:
    """Run one chain; returns ``(draws, info)``.

    ``draws`` maps each stored quantity to an array ``(n_draws, ...)``;
    ``info`` holds Metropolis acceptance rates and wall time per block.
    ``progress(chain, iteration, sampler)`` is called every 1,000 iterations.
    """
    rng = rng_stream(spec.seed, chain)
    sampler = OccupancySampler(dataset, spec, rng, graph=graph, phi_bounds=phi_bounds)
    store = None
    kept = 0
    for it in range(spec.n_iter):
        try:
            sampler.sweep(adapt=it < spec.n_burn)
        except _NUMERICAL as exc:
            raise NumericalError(it, sampler.block, exc) from exc
        if not _finite_state(sampler):
            raise NumericalError(it, sampler.block, "non-finite parameter values")
        sampler.check_invariants()
        if it >= spec.n_burn and (it - spec.n_burn + 1) % spec.n_thin == 0:
            snap = sampler.snapshot()
            if store is None:
                store = {k: np.empty((spec.n_draws,) + np.shape(v), dtype=np.asarray(v).dtype)
                         for k, v in snap.items()}
            for k, v in snap.items():
                store[k][kept] = v
            kept += 1
        if progress is not None and (it + 1) % 1000 == 0:
            progress(chain, it + 1, sampler)
    info = {"acceptance": sampler.acceptance(), "timing": dict(sampler.timing)}
    return store, info


def _coef_names(dataset: Dataset) -> dict:
    names = {"beta": tuple(dataset.occurrence.names)}
    for s in dataset.sources:
        names[f"alpha.{s.source_id}"] = tuple(s.design.names)
    for k, n in dataset.occurrence.n_levels.items():
        names[f"re_occ.{k}"] = tuple(str(i) for i in range(n))
    for s in dataset.sources:
        for k, n in s.design.n_levels.items():
            names[f"re_det.{s.source_id}.{k}"] = tuple(str(i) for i in range(n))
    return names


def fit(spec: ModelSpec, dataset: Dataset, threads: int = 1, progress=None) -> PosteriorChains:
    """Fit ``spec`` to ``dataset`` with ``spec.n_chains`` independent chains.

    Chains run on a pool of ``threads`` workers. Chain ``c`` always uses the
    random stream ``(spec.seed, c)``, so results do not depend on ``threads``.

    Raises
    ------
    DataError
        The dataset fails validation or does not match the model class.
    NumericalError
        A block failed numerically; carries the iteration and block name.
    """
    check(dataset, spec)
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    graph = phi_bounds = None
    if spec.spatial:
        phi_bounds = spec.priors.phi_bounds(dataset.sites.coords)
        if spec.gp == "nngp":
            graph = build_neighbor_graph(dataset.sites.coords, spec.n_neighbors)
    t0 = time.perf_counter()

    def one(c):
        return run_chain(dataset, spec, c, graph, phi_bounds, progress)

    if threads == 1 or spec.n_chains == 1:
        results = [one(c) for c in range(spec.n_chains)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(spec.n_chains)))
    draws = {k: np.stack([r[0][k] for r in results]) for k in results[0][0]}
    diagnostics = {
        "acceptance": [r[1]["acceptance"] for r in results],
        "timing": [r[1]["timing"] for r in results],
        "wall_time": time.perf_counter() - t0,
    }
    return PosteriorChains(draws, spec, tuple(dataset.species),
                           tuple(s.source_id for s in dataset.sources), _coef_names(dataset),
                           dataset.hash(), None if graph is None else graph.order.copy(),
                           diagnostics)


def _wrapper(model, spatial, doc):
    def f(dataset: Dataset, spec: ModelSpec | None = None, threads: int = 1, **overrides):
        base = spec or ModelSpec()
        return fit(base.replace(model=model, spatial=spatial, **overrides), dataset, threads)

    f.__doc__ = doc + "\n\n``overrides`` replace fields of ``spec`` (or of the default spec)."
    return f


fit_ssom = _wrapper("ssom", False, "Single-species occupancy model.")
fit_sp_ssom = _wrapper("ssom", True, "Single-species occupancy model with a spatial random intercept.")
fit_msom = _wrapper("msom", False, "Multispecies occupancy model with community-level priors.")
fit_sp_msom = _wrapper("msom", True, "Multispecies occupancy model with one spatial process per species.")
fit_iom = _wrapper("iom", False, "Integrated occupancy model over several detection sources.")
fit_sp_iom = _wrapper("iom", True, "Integrated occupancy model with a spatial random intercept.")
for _f, _n in ((fit_ssom, "fit_ssom"), (fit_sp_ssom, "fit_sp_ssom"), (fit_msom, "fit_msom"),
               (fit_sp_msom, "fit_sp_msom"), (fit_iom, "fit_iom"), (fit_sp_iom, "fit_sp_iom")):
    _f.__name__ = _f.__qualname__ = _n
