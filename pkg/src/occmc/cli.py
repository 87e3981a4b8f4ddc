"""Command-line driver: ``occmc {fit,predict,simulate,assess,summarize}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import assessment, simulate
from .chains import PosteriorChains
from .data import (ConfigError, DataError, ModelSpec, load_dataset, occurrence_design_for,
                   read_covariate_table, read_spec)
from .predict import predict_nonspatial, predict_spatial, write_predictions
from .samplers import NumericalError, fit

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# flag name -> ModelSpec field
_SPEC_FLAGS = {"model": "model", "kernel": "kernel", "neighbors": "n_neighbors", "gp": "gp",
               "iters": "n_iter", "burn": "n_burn", "thin": "n_thin", "chains": "n_chains",
               "seed": "seed"}


def _add_spec_flags(p):
    p.add_argument("--spec", help="model spec file (json or toml); overrides the bundle's spec")
    p.add_argument("--model", choices=("ssom", "msom", "iom"))
    p.add_argument("--spatial", action="store_true", default=None)
    p.add_argument("--kernel", choices=("exponential", "spherical", "gaussian", "matern"))
    p.add_argument("--neighbors", type=int, metavar="M")
    p.add_argument("--gp", choices=("full", "nngp"))
    p.add_argument("--iters", type=int)
    p.add_argument("--burn", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="occmc", description="Bayesian occupancy models by Polya-Gamma Gibbs sampling.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model to a dataset bundle")
    p.add_argument("data", help="dataset bundle directory")
    p.add_argument("--out", required=True, help="directory for chain files and manifest")
    _add_spec_flags(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--quiet", action="store_true", help="no progress lines")

    p = sub.add_parser("predict", help="predict occurrence at new sites")
    p.add_argument("chains", help="chain directory written by fit")
    p.add_argument("--data", required=True, help="dataset bundle the chains were fitted to")
    p.add_argument("--new", required=True, help="CSV site_id,x,y,<occurrence covariates>")
    p.add_argument("--out", required=True, help="prediction CSV")
    p.add_argument("--gp", choices=("full", "nngp"))
    p.add_argument("--neighbors", type=int, metavar="M")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="write a simulated dataset bundle and truth.json")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=("iom-40k",))
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--model", choices=("ssom", "msom", "iom"), default="ssom")
    p.add_argument("--spatial", action="store_true")
    p.add_argument("--sites", type=int, default=200)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--species", type=int, default=5)
    p.add_argument("--layout", choices=("uniform", "grid"), default="uniform")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("assess", help="WAIC, posterior predictive check, R-hat, optional CV")
    p.add_argument("chains")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--kfold", type=int, metavar="K")
    p.add_argument("--ppc-stat", choices=("chisq", "ftukey"), default="chisq")
    p.add_argument("--ppc-bin", choices=("site", "replicate"), default="site")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("summarize", help="print posterior quantiles")
    p.add_argument("chains")
    return ap


def _effective_spec(args, bundle_spec: ModelSpec) -> ModelSpec:
    spec = read_spec(args.spec) if args.spec else bundle_spec
    over = {f: getattr(args, a) for a, f in _SPEC_FLAGS.items() if getattr(args, a) is not None}
    if args.spatial:
        over["spatial"] = True
    if "n_iter" in over and "n_burn" not in over and spec.n_burn >= over["n_iter"]:
        over["n_burn"] = over["n_iter"] // 2
    try:
        return spec.replace(**over)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _progress(chain, it, sampler):
    acc = sampler.acceptance()
    txt = " ".join(f"{k}={np.mean(v):.2f}" for k, v in acc.items())
    print(f"chain {chain} iteration {it}" + (f" acceptance {txt}" if txt else ""),
          file=sys.stderr, flush=True)


def cmd_fit(args) -> int:
    dataset, bundle_spec = load_dataset(args.data)
    spec = _effective_spec(args, bundle_spec)
    if spec != bundle_spec:
        dataset, _ = load_dataset(args.data, spec)
    t0 = time.perf_counter()
    chains = fit(spec, dataset, threads=args.threads, progress=None if args.quiet else _progress)
    wall = time.perf_counter() - t0
    out = Path(args.out)
    chains.save(out)
    manifest = {
        "spec_hash": spec.hash(),
        "data_hash": chains.data_hash,
        "effective_spec": spec.to_dict(),
        "seeds": [[spec.seed, c] for c in range(spec.n_chains)],
        "threads": args.threads,
        "wall_time": wall,
        "block_time": chains.diagnostics["timing"],
        "acceptance": chains.diagnostics["acceptance"],
        "chain_files": [f"chain_{c}.npz" for c in range(spec.n_chains)],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return 0


def _load_matching(chain_dir, data_dir):
    chains = PosteriorChains.load(chain_dir)
    dataset, _ = load_dataset(data_dir, chains.spec)
    if dataset.hash() != chains.data_hash:
        raise DataError("chains were fitted to a different dataset (data hash mismatch)")
    return chains, dataset


def cmd_predict(args) -> int:
    chains, dataset = _load_matching(args.chains, args.data)
    coords, covs = read_covariate_table(args.new)
    X = occurrence_design_for(dataset, chains.spec, covs, coords.shape[0])
    if chains.spec.spatial:
        pred = predict_spatial(chains, dataset, X, coords, gp=args.gp, m=args.neighbors,
                               seed=args.seed)
    else:
        levels = {k: covs[k].astype(np.int64) for k in chains.spec.occ_random if k in covs}
        pred = predict_nonspatial(chains, X, seed=args.seed, occ_levels=levels or None)
    paths = write_predictions(args.out, coords, pred, chains.species)
    side = Path(args.out).with_suffix(".json")
    side.write_text(json.dumps({"spec_hash": chains.spec.hash(), "data_hash": chains.data_hash,
                                "files": [p.name for p in paths], "n_draws": int(pred.psi.shape[0])},
                               indent=1, sort_keys=True) + "\n")
    return 0


def cmd_simulate(args) -> int:
    out = Path(args.out)
    if args.preset:
        sim, spec = simulate.preset(args.preset, args.scale, seed=args.seed)
        sim.write(out, spec)
        return 0
    sp = simulate.SpatialSim("exponential", 1.0, 3.0) if args.spatial else None
    beta, alpha = (0.3, 0.5), (0.0, -0.5)
    kw = dict(layout=args.layout)
    if args.model == "ssom":
        sim = simulate.sim_occ(args.sites, args.reps, beta, alpha, sp, args.seed, **kw)
    elif args.model == "msom":
        sim = simulate.sim_ms_occ(args.sites, args.reps, args.species, beta, 1.0, alpha, 1.0,
                                  sp, args.seed, **kw)
    else:
        n = args.sites
        srcs = [(n, args.reps, alpha), (max(1, n // 2), args.reps, (0.5, 0.5))]
        sim = simulate.sim_int_occ(n, srcs, beta, sp, args.seed, **kw)
    spec = ModelSpec(model=args.model, spatial=args.spatial)
    sim.write(out, spec)
    return 0


def cmd_assess(args) -> int:
    chains, dataset = _load_matching(args.chains, args.data)
    report = assessment.AssessmentReport(chains.spec.hash(), chains.data_hash)
    report.waic = assessment.waic(chains, dataset)
    report.ppc = [assessment.ppc(chains, dataset, args.ppc_stat, args.ppc_bin)]
    if chains.n_chains >= 2 or chains.n_draws >= 4:
        report.rhat = assessment.rhat(chains)
    if args.kfold:
        report.cv = assessment.kfold_cv(chains.spec, dataset, args.kfold, threads=args.threads)
    Path(args.out).write_text(report.to_json())
    return 0


def cmd_summarize(args) -> int:
    chains = PosteriorChains.load(args.chains)
    print(assessment.format_summary(assessment.summary(chains)))
    return 0


_COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate,
             "assess": cmd_assess, "summarize": cmd_summarize}


def _fail(code, kind, message, **extra):
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def run(argv=None) -> int:
    """Run one subcommand; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except DataError as exc:
        return _fail(EXIT_DATA, "data", str(exc), diagnostics=getattr(exc, "diagnostics", []))
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, "numerical", str(exc), iteration=exc.iteration,
                     block=exc.block)
    except FileNotFoundError as exc:
        return _fail(EXIT_DATA, "data", str(exc))


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
