"""Datasets, model specifications and the on-disk dataset bundle.

A bundle is a directory holding::

    sites.csv            site_id,x,y
    occ_covs.csv         site_id,<covariate>,...
    y_<source>.csv       [species,]site_id,rep,value
    det_covs_<source>.csv  site_id,rep,name,value
    spec.json | spec.toml  (optional) model specification

Replicates are 1-based in files. A (site, rep) cell absent from ``y_<source>.csv``
was not surveyed.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .spatial import KERNELS, pairwise_distances

DEFAULT_COEF_VAR = 2.72
DEFAULT_IG = (2.0, 1.0)
DEFAULT_NU = (0.1, 2.5)

MODELS = ("ssom", "msom", "iom")


class DataError(ValueError):
    """Dataset files or structures violate the data model."""

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class ConfigError(ValueError):
    """Model specification is invalid or inconsistent with the data."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SiteGeometry:
    coords: np.ndarray

    @property
    def n_sites(self) -> int:
        return self.coords.shape[0]

    @property
    def site_id(self) -> np.ndarray:
        return np.arange(self.n_sites)


@dataclass(frozen=True, eq=False)
class DetectionData:
    """Binary detections ``y[species, site, replicate]`` over a dense grid.

    ``mask[site, rep]`` is True for surveyed cells; unsurveyed cells hold 0 in
    ``y`` and carry no information.
    """

    y: np.ndarray
    mask: np.ndarray

    @property
    def n_species(self) -> int:
        return self.y.shape[0]

    @property
    def n_sites(self) -> int:
        return self.y.shape[1]

    @property
    def replicate_counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    """Design matrix with an intercept in column 0 plus random-effect levels.

    ``X`` has shape (rows, p) for occurrence or (sites, K, p) for detection.
    ``random_effects`` maps an effect name to integer level codes with the
    row shape of ``X``; ``n_levels`` holds the number of levels per effect.
    """

    X: np.ndarray
    names: tuple
    random_effects: Mapping[str, np.ndarray] = field(default_factory=dict)
    n_levels: Mapping[str, int] = field(default_factory=dict)

    @property
    def n_coef(self) -> int:
        return self.X.shape[-1]


@dataclass(frozen=True, eq=False)
class DataSource:
    source_id: str
    detection: DetectionData
    design: DesignMatrices
    site_map: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_sites(self) -> int:
        return self.site_map.shape[0]


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-covariate centering and scaling, recorded for prediction."""

    names: tuple
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, covs: Mapping[str, np.ndarray], names):
        names = tuple(names)
        center = np.array([np.mean(covs[n]) for n in names])
        scale = np.array([np.std(covs[n]) for n in names])
        scale = np.where(scale > 0, scale, 1.0)
        return cls(names, center, scale)

    def apply(self, covs: Mapping[str, np.ndarray]) -> dict:
        out = dict(covs)
        for n, c, s in zip(self.names, self.center, self.scale):
            if n in out:
                out[n] = (np.asarray(out[n], dtype=float) - c) / s
        return out

    def invert(self, covs: Mapping[str, np.ndarray]) -> dict:
        out = dict(covs)
        for n, c, s in zip(self.names, self.center, self.scale):
            if n in out:
                out[n] = np.asarray(out[n], dtype=float) * s + c
        return out

    def to_dict(self):
        return {"names": list(self.names), "center": self.center.tolist(),
                "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return None
        return cls(tuple(d["names"]), np.asarray(d["center"], float), np.asarray(d["scale"], float))


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters. Variances of normal priors, (shape, scale) for inverse-gamma.

    ``phi`` of None means ``uniform(3 / max_dist, 3 / min_dist)`` computed
    from the site coordinates.
    """

    beta_mean: float = 0.0
    beta_var: float = DEFAULT_COEF_VAR
    alpha_mean: float = 0.0
    alpha_var: float = DEFAULT_COEF_VAR
    mu_beta_mean: float = 0.0
    mu_beta_var: float = DEFAULT_COEF_VAR
    mu_alpha_mean: float = 0.0
    mu_alpha_var: float = DEFAULT_COEF_VAR
    tau2_beta: tuple = DEFAULT_IG
    tau2_alpha: tuple = DEFAULT_IG
    sigma2: tuple = DEFAULT_IG
    re_var: tuple = DEFAULT_IG
    phi: tuple | None = None
    nu: tuple = DEFAULT_NU

    def __post_init__(self):
        for n in ("beta_var", "alpha_var", "mu_beta_var", "mu_alpha_var"):
            if not np.all(np.asarray(getattr(self, n)) > 0):
                raise ConfigError(f"prior variance {n} must be positive")
        for n in ("tau2_beta", "tau2_alpha", "sigma2", "re_var"):
            a, b = getattr(self, n)
            if not (a > 0 and b > 0):
                raise ConfigError(f"inverse-gamma prior {n} needs positive shape and scale")
        for n in ("phi", "nu"):
            v = getattr(self, n)
            if v is not None and not v[0] < v[1]:
                raise ConfigError(f"uniform prior {n} needs lower < upper")
        if not (0 < self.nu[0] and self.nu[1] <= 2.5):
            raise ConfigError("Matern smoothness support must lie in (0, 2.5]")

    def phi_bounds(self, coords) -> tuple:
        if self.phi is not None:
            return tuple(float(v) for v in self.phi)
        coords = np.asarray(coords, dtype=float)
        if coords.shape[0] > 3000:
            d, _ = cKDTree(coords).query(coords, k=2)
            dmin = float(d[:, 1].min())
            # the diameter is attained between convex-hull vertices
            hull = coords[ConvexHull(coords).vertices]
            dmax = float(pairwise_distances(hull).max())
        else:
            d = pairwise_distances(coords)
            dmax = float(d.max())
            d[np.diag_indices_from(d)] = np.inf
            dmin = float(d.min())
        if not (dmin > 0 and np.isfinite(dmin)):
            raise ConfigError("cannot derive a decay prior: coincident or single sites")
        return 3.0 / dmax, 3.0 / dmin

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        for k in ("tau2_beta", "tau2_alpha", "sigma2", "re_var", "phi", "nu"):
            if d.get(k) is not None:
                d[k] = tuple(float(v) for v in d[k])
        return cls(**d)


@dataclass(frozen=True)
class ModelSpec:
    """What to fit and how long to run it.

    Covariate term lists use plain column names, ``name^2`` for squares and
    ``a:b`` for products; None selects every covariate column. Detection
    terms and random effects apply to every data source.
    """

    model: str = "ssom"
    spatial: bool = False
    kernel: str = "exponential"
    gp: str = "nngp"
    n_neighbors: int = 15
    priors: PriorSpec = field(default_factory=PriorSpec)
    n_iter: int = 5000
    n_burn: int = 2500
    n_thin: int = 1
    n_chains: int = 1
    seed: int = 0
    occ_terms: tuple | None = None
    det_terms: tuple | None = None
    occ_random: tuple = ()
    det_random: tuple = ()
    standardize: bool = False

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"kernel must be one of {KERNELS}")
        if self.gp not in ("nngp", "full"):
            raise ConfigError("gp must be 'nngp' or 'full'")
        if self.gp == "nngp" and self.n_neighbors < 1:
            raise ConfigError("n_neighbors must be >= 1")
        if not 0 <= self.n_burn < self.n_iter:
            raise ConfigError("need 0 <= n_burn < n_iter")
        if self.n_thin < 1 or self.n_chains < 1:
            raise ConfigError("n_thin and n_chains must be >= 1")
        if self.spatial and self.occ_random:
            raise ConfigError("occurrence random effects are only available in nonspatial models")

    @property
    def n_draws(self) -> int:
        return (self.n_iter - self.n_burn) // self.n_thin

    def replace(self, **kw) -> "ModelSpec":
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["priors"] = self.priors.to_dict()
        for k in ("occ_terms", "det_terms", "occ_random", "det_random"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model spec fields: {sorted(unknown)}")
        if "priors" in d:
            d["priors"] = PriorSpec.from_dict(d["priors"])
        for k in ("occ_terms", "det_terms", "occ_random", "det_random"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Everything a sampler needs: geometry, occurrence design, detection sources.

    ``occ_covariates`` and each source's ``covariates`` keep the raw values as
    read; the design matrices may be standardized copies.
    """

    sites: SiteGeometry
    occurrence: DesignMatrices
    sources: tuple
    species: tuple = ("species",)
    occ_covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    standardizer: Standardizer | None = None

    @property
    def n_sites(self) -> int:
        return self.sites.n_sites

    @property
    def n_species(self) -> int:
        return len(self.species)

    def covered_sites(self) -> np.ndarray:
        """Sorted shared-site indices with at least one surveyed replicate."""
        cov = np.zeros(self.n_sites, dtype=bool)
        for s in self.sources:
            cov[s.site_map[s.detection.replicate_counts > 0]] = True
        return np.flatnonzero(cov)

    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.sites.coords, dtype=float).tobytes())
        h.update(np.ascontiguousarray(self.occurrence.X, dtype=float).tobytes())
        for s in self.sources:
            h.update(s.source_id.encode())
            h.update(np.ascontiguousarray(s.detection.y, dtype=np.int8).tobytes())
            h.update(np.ascontiguousarray(s.detection.mask).tobytes())
            h.update(np.ascontiguousarray(s.design.X, dtype=float).tobytes())
            h.update(np.ascontiguousarray(s.site_map, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]

    def subset(self, site_idx) -> "Dataset":
        """Dataset restricted to shared sites ``site_idx`` (in the given order)."""
        site_idx = np.asarray(site_idx, dtype=np.int64)
        new_index = np.full(self.n_sites, -1, dtype=np.int64)
        new_index[site_idx] = np.arange(site_idx.size)
        occ = self.occurrence
        occ_new = DesignMatrices(occ.X[site_idx], occ.names,
                                 {k: v[site_idx] for k, v in occ.random_effects.items()},
                                 dict(occ.n_levels))
        sources = []
        for s in self.sources:
            keep = np.flatnonzero(new_index[s.site_map] >= 0)
            det = DetectionData(s.detection.y[:, keep], s.detection.mask[keep])
            des = DesignMatrices(s.design.X[keep], s.design.names,
                                 {k: v[keep] for k, v in s.design.random_effects.items()},
                                 dict(s.design.n_levels))
            sources.append(DataSource(s.source_id, det, des, new_index[s.site_map[keep]],
                                      {k: v[keep] for k, v in s.covariates.items()}))
        return Dataset(SiteGeometry(self.sites.coords[site_idx]), occ_new, tuple(sources),
                       self.species, {k: v[site_idx] for k, v in self.occ_covariates.items()},
                       self.standardizer)


# ---------------------------------------------------------------------------
# Design construction
# ---------------------------------------------------------------------------

_TERM = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*(?:\^\s*(\d+))?\s*$")


def _eval_term(term: str, covs: Mapping[str, np.ndarray]) -> np.ndarray:
    out = None
    for factor in term.split(":"):
        m = _TERM.match(factor)
        if not m or m.group(1) not in covs:
            raise ConfigError(f"cannot build design term {term!r}")
        v = np.asarray(covs[m.group(1)], dtype=float) ** int(m.group(2) or 1)
        out = v if out is None else out * v
    return out


def build_design(covs: Mapping[str, np.ndarray], terms, shape,
                 random: Sequence[str] = (), levels: Mapping[str, np.ndarray] | None = None,
                 n_levels: Mapping[str, int] | None = None) -> DesignMatrices:
    """Intercept plus the requested covariate terms, stacked on the last axis."""
    if terms is None:
        terms = [k for k in covs if k not in random]
    cols = [np.ones(shape)] + [np.broadcast_to(_eval_term(t, covs), shape) for t in terms]
    X = np.stack(cols, axis=-1).astype(float)
    re_idx, re_n = {}, {}
    for r in random:
        src = levels if levels is not None else covs
        if r not in src:
            raise ConfigError(f"random effect {r!r} not found")
        lv = np.asarray(src[r])
        re_idx[r] = lv.astype(np.int64)
        re_n[r] = int(n_levels[r]) if n_levels and r in n_levels else int(lv.max()) + 1
    return DesignMatrices(X, ("intercept",) + tuple(terms), re_idx, re_n)


def make_dataset(coords, occ_covs: Mapping[str, np.ndarray], sources, *,
                 species=("species",), occ_terms=None, det_terms=None,
                 occ_random=(), det_random=(), standardize=False) -> Dataset:
    """Assemble a :class:`Dataset` from arrays.

    ``sources`` is a sequence of ``(source_id, y, mask, det_covs, site_map)``
    with ``y`` shaped (N, J_s, K) and detection covariates shaped (J_s, K).
    Random-effect columns must hold integer level codes.
    """
    coords = np.asarray(coords, dtype=float)
    J = coords.shape[0]
    occ_covs = {k: np.asarray(v) for k, v in occ_covs.items()}
    cont = [k for k in occ_covs if k not in occ_random]
    std = Standardizer.fit(occ_covs, cont) if standardize and cont else None
    occ_used = std.apply({k: occ_covs[k] for k in cont}) if std else {k: occ_covs[k] for k in cont}
    occ = build_design(occ_used, occ_terms if occ_terms is None else list(occ_terms), (J,),
                       occ_random, {k: occ_covs[k] for k in occ_random})
    built = []
    for sid, y, mask, det_covs, site_map in sources:
        y = np.asarray(y)
        if y.ndim == 2:
            y = y[None]
        mask = np.asarray(mask, dtype=bool)
        det_covs = {k: np.asarray(v) for k, v in det_covs.items()}
        dcont = {k: np.where(mask, v, 0.0) for k, v in det_covs.items() if k not in det_random}
        if standardize and dcont:
            dstd = Standardizer.fit({k: v[mask] for k, v in dcont.items()}, list(dcont))
            dcont = {k: np.where(mask, v, 0.0) for k, v in dstd.apply(dcont).items()}
        levels = {k: np.where(mask, det_covs[k], 0) for k in det_random if k in det_covs}
        design = build_design(dcont, None if det_terms is None else list(det_terms),
                              mask.shape, det_random, levels)
        built.append(DataSource(str(sid), DetectionData(np.where(mask[None], y, 0).astype(np.int8), mask),
                                design, np.asarray(site_map, dtype=np.int64), det_covs))
    return Dataset(SiteGeometry(coords), occ, tuple(built), tuple(species), occ_covs, std)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate(dataset: Dataset, spec: ModelSpec | None = None) -> list:
    """Return one diagnostic string per violated invariant (empty if valid)."""
    diags = []
    coords = dataset.sites.coords
    J = coords.shape[0]
    if J < 1:
        diags.append("no sites")
    if coords.ndim != 2 or coords.shape[1] != 2:
        diags.append(f"coordinates must have shape (J, 2), got {coords.shape}")
        return diags
    bad = np.argwhere(~np.isfinite(coords))
    for r, c in bad[:10]:
        diags.append(f"non-finite coordinate at site {r}, column {c}")
    if spec is not None and spec.spatial and J > 1:
        _, first, counts = np.unique(coords, axis=0, return_index=True, return_counts=True)
        for f in first[counts > 1][:10]:
            dup = np.flatnonzero((coords == coords[f]).all(1))
            diags.append(f"zero inter-site distance between sites {dup.tolist()}")
    occ = dataset.occurrence
    if occ.X.shape[0] != J:
        diags.append(f"occurrence design has {occ.X.shape[0]} rows for {J} sites")
    for r, c in np.argwhere(~np.isfinite(occ.X))[:10]:
        diags.append(f"non-finite occurrence covariate at row {r}, column {c} ({occ.names[c]})")
    if occ.X.shape[-1] < 1 or not np.all(occ.X[..., 0] == 1):
        diags.append("occurrence design lacks an intercept column")
    for name, lv in occ.random_effects.items():
        if np.any(lv < 0) or np.any(lv >= occ.n_levels[name]):
            diags.append(f"occurrence random effect {name} has invalid level codes")
    for s in dataset.sources:
        det = s.detection
        tag = f"source {s.source_id}"
        if det.y.shape[0] != dataset.n_species:
            diags.append(f"{tag}: {det.y.shape[0]} species in y, expected {dataset.n_species}")
        if det.y.shape[1:] != det.mask.shape:
            diags.append(f"{tag}: y shape {det.y.shape[1:]} does not match mask {det.mask.shape}")
            continue
        if s.site_map.shape[0] != det.n_sites:
            diags.append(f"{tag}: site map length {s.site_map.shape[0]} != {det.n_sites} sites")
        out = np.flatnonzero((s.site_map < 0) | (s.site_map >= J))
        for j in out[:10]:
            diags.append(f"{tag}: local site {j} maps outside 0..{J - 1} (unmapped site)")
        if np.unique(s.site_map).size != s.site_map.size:
            diags.append(f"{tag}: site map is not injective")
        obs = np.broadcast_to(det.mask, det.y.shape)
        nb = np.argwhere(obs & (det.y != 0) & (det.y != 1))
        for i, j, k in nb[:10]:
            diags.append(f"{tag}: non-binary detection value {det.y[i, j, k]} at species {i}, "
                         f"site {j}, rep {k + 1}")
        if np.any(det.y[~obs] != 0):
            diags.append(f"{tag}: masked cells carry values")
        X = s.design.X
        if X.shape[:2] != det.mask.shape:
            diags.append(f"{tag}: detection design shape {X.shape[:2]} != {det.mask.shape}")
            continue
        badx = np.argwhere(~np.isfinite(X) & det.mask[..., None])
        for j, k, c in badx[:10]:
            diags.append(f"{tag}: non-finite detection covariate at site {j}, rep {k + 1}, "
                         f"column {c} ({s.design.names[c]})")
        if not np.all(X[..., 0][det.mask] == 1):
            diags.append(f"{tag}: detection design lacks an intercept column")
        for name, lv in s.design.random_effects.items():
            v = lv[det.mask]
            if np.any(v < 0) or np.any(v >= s.design.n_levels[name]):
                diags.append(f"{tag}: detection random effect {name} has invalid level codes")
    if spec is not None:
        diags.extend(_check_spec_fit(dataset, spec))
    return diags


def _check_spec_fit(dataset: Dataset, spec: ModelSpec) -> list:
    out = []
    S = len(dataset.sources)
    if S < 1:
        out.append("dataset has no detection source")
    if spec.model in ("ssom", "msom") and S != 1:
        out.append(f"{spec.model} needs exactly one data source, found {S}")
    if spec.model in ("ssom", "iom") and dataset.n_species != 1:
        out.append(f"{spec.model} needs a single species, found {dataset.n_species}")
    return out


def check(dataset: Dataset, spec: ModelSpec | None = None) -> Dataset:
    diags = validate(dataset, spec)
    if diags:
        raise DataError(diags)
    return dataset


# ---------------------------------------------------------------------------
# Bundle I/O
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path.name}: missing header row")
    return rows[0], rows[1:]


def _num(text, path, line):
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path.name} line {line}: non-numeric value {text!r}") from None


def _int(text, path, line):
    v = _num(text, path, line)
    if not v.is_integer():
        raise DataError(f"{path.name} line {line}: expected an integer, got {text!r}")
    return int(v)


def _source_key(sid: str):
    return (0, int(sid), "") if sid.isdigit() else (1, 0, sid)


def read_spec(path) -> ModelSpec:
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            return ModelSpec.from_dict(tomllib.load(fh))
    with open(path) as fh:
        return ModelSpec.from_dict(json.load(fh))


def write_spec(spec: ModelSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path, spec: ModelSpec | None = None) -> tuple:
    """Read a dataset bundle directory.

    Returns ``(dataset, spec)``; ``spec`` comes from the argument, else from
    ``spec.json``/``spec.toml`` in the bundle, else defaults (in which case
    the data are not checked against the model class). Raises
    :class:`DataError` listing every problem found, with offending indices.
    """
    root = Path(path)
    explicit = spec is not None
    if spec is None:
        for name in ("spec.json", "spec.toml"):
            if (root / name).exists():
                spec = read_spec(root / name)
                explicit = True
                break
        else:
            spec = ModelSpec()

    p = root / "sites.csv"
    header, rows = _read_csv(p)
    if header[:3] != ["site_id", "x", "y"]:
        raise DataError("sites.csv: header must be site_id,x,y")
    ids = [_int(r[0], p, i + 2) for i, r in enumerate(rows)]
    if ids != list(range(len(ids))):
        raise DataError("sites.csv: site_id must run 0..J-1 in order")
    coords = np.array([[_num(r[1], p, i + 2), _num(r[2], p, i + 2)] for i, r in enumerate(rows)],
                      dtype=float).reshape(-1, 2)
    J = coords.shape[0]

    occ_covs = {}
    p = root / "occ_covs.csv"
    if p.exists():
        header, rows = _read_csv(p)
        if header[0] != "site_id":
            raise DataError("occ_covs.csv: first column must be site_id")
        if len(rows) != J:
            raise DataError(f"occ_covs.csv: {len(rows)} rows for {J} sites (dimension mismatch)")
        for i, r in enumerate(rows):
            if _int(r[0], p, i + 2) != i:
                raise DataError(f"occ_covs.csv line {i + 2}: site_id out of order")
            if len(r) != len(header):
                raise DataError(f"occ_covs.csv line {i + 2}: dimension mismatch")
        for c, name in enumerate(header[1:], start=1):
            occ_covs[name] = np.array([_num(r[c], p, i + 2) for i, r in enumerate(rows)])

    src_files = sorted(root.glob("y_*.csv"), key=lambda f: _source_key(f.stem[2:]))
    if not src_files:
        raise DataError("bundle has no y_<source>.csv file")
    sources, species = [], None
    errors = []
    for f in src_files:
        sid = f.stem[2:]
        header, rows = _read_csv(f)
        has_sp = header[0] == "species"
        expect = (["species"] if has_sp else []) + ["site_id", "rep", "value"]
        if header != expect:
            raise DataError(f"{f.name}: header must be {','.join(expect)}")
        recs = []
        sp_names = []
        for i, r in enumerate(rows):
            sp = r[0] if has_sp else "species"
            if sp not in sp_names:
                sp_names.append(sp)
            off = 1 if has_sp else 0
            site = _int(r[off], f, i + 2)
            rep = _int(r[off + 1], f, i + 2)
            val = _num(r[off + 2], f, i + 2)
            if site < 0 or site >= J:
                errors.append(f"{f.name} line {i + 2}: site {site} not in sites.csv (unmapped site)")
                continue
            if rep < 1:
                errors.append(f"{f.name} line {i + 2}: replicate numbers start at 1")
                continue
            if val not in (0.0, 1.0):
                errors.append(f"{f.name} line {i + 2}: non-binary detection value {r[off + 2]} "
                              f"at (site {site}, rep {rep})")
                continue
            recs.append((sp, site, rep, int(val)))
        if errors:
            continue
        if species is None:
            species = sp_names
        elif set(sp_names) != set(species):
            errors.append(f"{f.name}: species differ from other sources")
            continue
        site_ids = sorted({s for _, s, _, _ in recs})
        local = {s: n for n, s in enumerate(site_ids)}
        K = max((r for _, _, r, _ in recs), default=1)
        N = len(species)
        y = np.zeros((N, len(site_ids), K), dtype=np.int8)
        mask = np.zeros((len(site_ids), K), dtype=bool)
        seen = np.zeros((N, len(site_ids), K), dtype=bool)
        sp_idx = {s: n for n, s in enumerate(species)}
        for sp, s, r, v in recs:
            i, j, k = sp_idx[sp], local[s], r - 1
            if seen[i, j, k]:
                errors.append(f"{f.name}: duplicate record for species {sp}, site {s}, rep {r}")
            seen[i, j, k] = True
            y[i, j, k] = v
            mask[j, k] = True
        if N > 1 and not np.all(seen == mask[None]):
            errors.append(f"{f.name}: species observed on different replicate sets")

        det_covs = {}
        p = root / f"det_covs_{sid}.csv"
        if p.exists():
            header, rows = _read_csv(p)
            if header != ["site_id", "rep", "name", "value"]:
                raise DataError(f"{p.name}: header must be site_id,rep,name,value")
            for i, r in enumerate(rows):
                s, rep = _int(r[0], p, i + 2), _int(r[1], p, i + 2)
                if s not in local or rep < 1 or rep > K or not mask[local[s], rep - 1]:
                    errors.append(f"{p.name} line {i + 2}: (site {s}, rep {rep}) has no detection "
                                  "record (dimension mismatch)")
                    continue
                arr = det_covs.setdefault(r[2], np.full((len(site_ids), K), np.nan))
                arr[local[s], rep - 1] = _num(r[3], p, i + 2)
            for name, arr in det_covs.items():
                miss = np.argwhere(mask & np.isnan(arr))
                for j, k in miss[:5]:
                    errors.append(f"{p.name}: covariate {name} missing at site {site_ids[j]}, "
                                  f"rep {k + 1} (dimension mismatch)")
                det_covs[name] = np.where(mask, arr, 0.0)
        sources.append((sid, y, mask, det_covs, np.array(site_ids, dtype=np.int64)))
    if errors:
        raise DataError(errors)

    # integer-coded random-effect columns
    for name in spec.det_random:
        for s in sources:
            if name in s[3]:
                s[3][name] = s[3][name].astype(np.int64)
    for name in spec.occ_random:
        if name in occ_covs:
            occ_covs[name] = occ_covs[name].astype(np.int64)
    try:
        ds = make_dataset(coords, occ_covs, sources, species=tuple(species),
                          occ_terms=spec.occ_terms, det_terms=spec.det_terms,
                          occ_random=spec.occ_random, det_random=spec.det_random,
                          standardize=spec.standardize)
    except ConfigError as exc:
        raise DataError(str(exc)) from None
    # without a stated spec only the data invariants are checked
    diags = validate(ds, spec if explicit else None)
    if diags:
        raise DataError(diags)
    return ds, spec


def write_dataset(dataset: Dataset, path, spec: ModelSpec | None = None) -> Path:
    """Write the canonical bundle for ``dataset`` (raw covariate values)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sites.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["site_id", "x", "y"])
        for j, (x, y) in enumerate(dataset.sites.coords):
            wr.writerow([j, _fmt(x), _fmt(y)])
    if dataset.occ_covariates:
        names = list(dataset.occ_covariates)
        with open(root / "occ_covs.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["site_id"] + names)
            for j in range(dataset.n_sites):
                wr.writerow([j] + [_fmt(dataset.occ_covariates[n][j]) for n in names])
    multi = dataset.n_species > 1
    for s in dataset.sources:
        det = s.detection
        with open(root / f"y_{s.source_id}.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow((["species"] if multi else []) + ["site_id", "rep", "value"])
            for i, sp in enumerate(dataset.species):
                for j, k in np.argwhere(det.mask):
                    wr.writerow(([sp] if multi else []) + [int(s.site_map[j]), int(k) + 1,
                                                            int(det.y[i, j, k])])
        if s.covariates:
            with open(root / f"det_covs_{s.source_id}.csv", "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(["site_id", "rep", "name", "value"])
                for j, k in np.argwhere(det.mask):
                    for name, arr in s.covariates.items():
                        wr.writerow([int(s.site_map[j]), int(k) + 1, name, _fmt(arr[j, k])])
    if spec is not None:
        write_spec(spec, root / "spec.json")
    return root


def read_covariate_table(path) -> tuple:
    """Read a prediction table ``site_id,x,y,<covariates...>``.

    Returns ``(coords, covariates)``.
    """
    p = Path(path)
    header, rows = _read_csv(p)
    if header[:3] != ["site_id", "x", "y"]:
        raise DataError(f"{p.name}: header must start with site_id,x,y")
    coords = np.array([[_num(r[1], p, i + 2), _num(r[2], p, i + 2)] for i, r in enumerate(rows)],
                      dtype=float).reshape(-1, 2)
    covs = {name: np.array([_num(r[c], p, i + 2) for i, r in enumerate(rows)])
            for c, name in enumerate(header[3:], start=3)}
    return coords, covs


def occurrence_design_for(dataset: Dataset, spec: ModelSpec, covs: Mapping[str, np.ndarray],
                          n_rows: int) -> np.ndarray:
    """Occurrence design at new locations, using the training standardization."""
    cont = {k: np.asarray(v, dtype=float) for k, v in covs.items() if k not in spec.occ_random}
    if dataset.standardizer is not None:
        cont = dataset.standardizer.apply(cont)
    names = dataset.occurrence.names[1:]
    missing = [n for n in names for f in n.split(":") if _TERM.match(f).group(1) not in cont]
    if missing:
        raise ConfigError(f"prediction covariates missing: {sorted(set(missing))}")
    return build_design(cont, list(names), (n_rows,)).X


__all__ = [
    "ConfigError", "DataError", "DataSource", "Dataset", "DesignMatrices", "DetectionData",
    "ModelSpec", "PriorSpec", "SiteGeometry", "Standardizer", "build_design", "check",
    "load_dataset", "make_dataset", "occurrence_design_for", "read_covariate_table",
    "read_spec", "validate", "write_dataset", "write_spec",
]
