"""Posterior draws and their on-disk form.

Each chain is written as ``chain_<c>.npz`` (one array per stored quantity,
shaped ``(n_draws, ...)``) plus ``chain_<c>.json`` describing the columns,
thinning, seed, spec and data hashes and the NNGP site ordering. Archives are
written with fixed member timestamps so identical draws give identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ModelSpec

_ZIP_TIME = (1980, 1, 1, 0, 0, 0)

# latent or per-site quantities left out of parameter summaries
_LATENT = ("z", "psi", "w")
_LATENT_PREFIX = ("p.", "re_occ.", "re_det.")


@dataclass
class PosteriorChains:
    """Thinned draws from one or more chains.

    ``draws[name]`` has shape ``(n_chains, n_draws, ...)``. Per-species
    quantities lead with the species axis, e.g. ``beta`` is
    ``(C, D, N, p_occ)`` and ``psi`` is ``(C, D, N, J)``.
    """

    draws: dict
    spec: ModelSpec
    species: tuple
    source_ids: tuple
    coef_names: dict
    data_hash: str
    ordering: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return next(iter(self.draws.values())).shape[0]

    @property
    def n_draws(self) -> int:
        return next(iter(self.draws.values())).shape[1]

    def __getitem__(self, name):
        return self.draws[name]

    def pooled(self, name) -> np.ndarray:
        """Draws of ``name`` with chains concatenated: ``(C * D, ...)``."""
        a = self.draws[name]
        return a.reshape((-1,) + a.shape[2:])

    def scalar_draws(self) -> dict:
        """Every scalar model parameter as a ``(C, D)`` array, keyed by a readable label."""
        out = {}
        for name, arr in self.draws.items():
            if name in _LATENT or name.startswith(_LATENT_PREFIX):
                continue
            flat = arr.reshape(arr.shape[:2] + (-1,))
            for k, lab in enumerate(self._labels(name, arr.shape[2:])):
                out[lab] = flat[:, :, k]
        return out

    def _labels(self, name, shape):
        if not shape:
            return [name]
        if name in ("sigma2", "phi", "nu"):
            return [f"{name}[{s}]" for s in self.species]
        if name in ("mu_beta", "tau2_beta"):
            coefs = self.coef_names["beta"]
        elif name in ("mu_alpha", "tau2_alpha"):
            coefs = self.coef_names[f"alpha.{self.source_ids[0]}"]
        else:
            coefs = self.coef_names[name]
        if len(shape) == 1:
            return [f"{name}[{c}]" for c in coefs]
        return [f"{name}[{s},{c}]" for s in self.species for c in coefs]

    # -- persistence -----------------------------------------------------

    def sidecar(self, chain: int) -> dict:
        return {
            "chain": chain,
            "columns": {k: {"shape": list(v.shape[1:]), "dtype": str(v.dtype)}
                        for k, v in sorted(self.draws.items())},
            "n_draws": self.n_draws,
            "n_thin": self.spec.n_thin,
            "n_burn": self.spec.n_burn,
            "n_iter": self.spec.n_iter,
            "seed": self.spec.seed,
            "spec_hash": self.spec.hash(),
            "data_hash": self.data_hash,
            "spec": self.spec.to_dict(),
            "species": list(self.species),
            "sources": list(self.source_ids),
            "coef_names": {k: list(v) for k, v in sorted(self.coef_names.items())},
            "site_ordering": None if self.ordering is None else [int(v) for v in self.ordering],
            "acceptance": self.diagnostics.get("acceptance", [{}] * self.n_chains)[chain],
        }

    def save(self, directory) -> list:
        """Write one archive and one sidecar per chain; returns the paths written."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for c in range(self.n_chains):
            npz = d / f"chain_{c}.npz"
            with zipfile.ZipFile(npz, "w", compression=zipfile.ZIP_STORED) as zf:
                for name in sorted(self.draws):
                    buf = io.BytesIO()
                    np.lib.format.write_array(buf, np.ascontiguousarray(self.draws[name][c]),
                                              allow_pickle=False)
                    zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_TIME), buf.getvalue())
            side = d / f"chain_{c}.json"
            side.write_text(json.dumps(self.sidecar(c), indent=1, sort_keys=True) + "\n")
            paths += [npz, side]
        return paths

    @classmethod
    def load(cls, directory) -> "PosteriorChains":
        d = Path(directory)
        sides = sorted(d.glob("chain_*.json"), key=lambda p: int(p.stem.split("_")[1]))
        if not sides:
            raise FileNotFoundError(f"no chain files in {d}")
        per_chain, metas = [], []
        for side in sides:
            meta = json.loads(side.read_text())
            with np.load(side.with_suffix(".npz"), allow_pickle=False) as z:
                per_chain.append({k: z[k] for k in z.files})
            metas.append(meta)
        hashes = {m["spec_hash"] for m in metas}
        if len(hashes) != 1:
            raise ValueError("chain files come from different model specs")
        draws = {k: np.stack([pc[k] for pc in per_chain]) for k in per_chain[0]}
        m = metas[0]
        ordering = None if m["site_ordering"] is None else np.asarray(m["site_ordering"])
        return cls(draws, ModelSpec.from_dict(m["spec"]), tuple(m["species"]),
                   tuple(m["sources"]), {k: tuple(v) for k, v in m["coef_names"].items()},
                   m["data_hash"], ordering,
                   {"acceptance": [mm.get("acceptance", {}) for mm in metas]})
