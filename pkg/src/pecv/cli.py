"""Command-line front end.

Five subcommands: `sample` runs one chain and persists the trace, `estimate`
post-processes a persisted trace into per-coordinate reports, `experiment`
runs the full replicate protocol and reports variance-reduction factors,
`fit-g0` refits the control-variate family on a reference chain, and
`datasets` lists the bundled logistic benchmark tables.

Configuration comes from an optional JSON file (--config) with individual
flags overriding its entries.  The PECV_OUTPUT_DIR environment variable sets
the default directory for output files and nothing else.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from pathlib import Path

from pecv.control_variates import (
    cv_reports_to_csv,
    cv_reports_to_json,
    default_params,
    estimate,
)
from pecv.experiments import (
    ExperimentSpec,
    emit_trace_series,
    experiment_spec_from_dict,
    run_experiment,
)
from pecv.fitting import fit_g0, load_fitted_params, save_fit
from pecv.samplers import load_trace, run_chain, save_trace
from pecv.targets import bundled_dataset, bundled_dataset_names

_SPEC_KEYS = (
    "target",
    "algorithm",
    "n",
    "burn_in",
    "replicates",
    "seed",
    "coords",
    "dim",
    "mixture_h",
    "mixture_seed",
    "dataset",
    "sv_length",
    "sv_seed",
    "step2",
)


def _output_dir() -> Path:
    return Path(os.environ.get("PECV_OUTPUT_DIR", "."))


def _slug(label: str) -> str:
    # labels carry {k=v} detail; keep filenames shell-friendly
    return re.sub(r"[^\w.-]+", "_", label).strip("_")


def _parse_coords(text: str):
    if text == "all":
        return "all"
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _add_spec_flags(p: argparse.ArgumentParser, with_replicates: bool) -> None:
    p.add_argument("--config", type=Path, help="JSON file with experiment keys")
    p.add_argument("--target", choices=("gaussian", "mixture", "logistic", "sv"))
    p.add_argument("--algorithm", choices=("rwm", "mala"))
    p.add_argument("--n", type=int, help="post-burn-in chain length")
    p.add_argument("--burn-in", dest="burn_in", type=int)
    if with_replicates:
        p.add_argument("--replicates", type=int, help="number of replicate chains T")
        p.add_argument("--coords", type=_parse_coords, help='"all" or comma list, 1-based')
    p.add_argument("--seed", type=int)
    p.add_argument("--dim", type=int, help="dimension for gaussian/mixture targets")
    p.add_argument("--mixture-h", dest="mixture_h", type=float)
    p.add_argument("--mixture-seed", dest="mixture_seed", type=int)
    p.add_argument("--dataset", choices=bundled_dataset_names())
    p.add_argument("--sv-length", dest="sv_length", type=int)
    p.add_argument("--sv-seed", dest="sv_seed", type=int)
    p.add_argument("--step2", type=float, help="fixed step size (disables adaptation)")
    p.add_argument("--params", type=Path, help="fitted parameter file from fit-g0")


def _spec_from_args(args: argparse.Namespace, defaults: dict) -> ExperimentSpec:
    cfg = dict(defaults)
    if args.config is not None:
        with open(args.config) as fh:
            cfg.update(json.load(fh))
    for key in _SPEC_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "params", None) is not None:
        cfg["params"] = load_fitted_params(args.params)
    return experiment_spec_from_dict(cfg)


def _cmd_sample(args: argparse.Namespace) -> int:
    from pecv.experiments import _proposal_spec, build_problem

    spec = _spec_from_args(args, {"replicates": 2, "burn_in": 0})
    target, approx = build_problem(spec)
    pspec = _proposal_spec(spec, approx.dim)
    trace = run_chain(target, approx, pspec, n=spec.n, burn_in=spec.burn_in, seed=spec.seed)
    out = args.out if args.out is not None else _output_dir() / "trace.npz"
    save_trace(trace, out, approx=approx)
    print(
        f"{spec.label} {spec.algorithm} n={spec.n} burn_in={spec.burn_in} "
        f"seed={spec.seed}: acceptance {trace.acceptance_rate:.3f}, "
        f"step2 {trace.step2:.6g} -> {out}"
    )
    return 0


def _cmd_estimate(args: argparse.Namespace) -> int:
    trace, approx = load_trace(args.trace)
    if approx is None:
        print("trace file has no embedded approximation; re-run sample", file=sys.stderr)
        return 1
    params = (
        load_fitted_params(args.params) if args.params is not None else default_params(trace.kind)
    )
    coords = None if args.coords in (None, "all") else args.coords
    reports = estimate(trace, approx, params, coords=coords, theta_override=args.theta)
    text = cv_reports_to_csv(reports) if args.format == "csv" else cv_reports_to_json(reports)
    if args.out is not None:
        Path(args.out).write_text(text if text.endswith("\n") else text + "\n")
        print(f"{len(reports)} coordinate reports -> {args.out}")
    else:
        print(text, end="" if text.endswith("\n") else "\n")
    return 0


def _cmd_experiment(args: argparse.Namespace) -> int:
    default_t = 100 if args.paper_scale else 50
    spec = _spec_from_args(args, {"replicates": default_t, "burn_in": 10_000})
    report = run_experiment(spec)
    out = args.out if args.out is not None else _output_dir() / f"{_slug(spec.label)}_{spec.algorithm}.json"
    Path(out).write_text(report.to_json() + "\n")
    print(report.render_text(), end="")
    print(f"report -> {out}")
    if args.series is not None:
        if args.series_coord is None:
            print("--series requires --series-coord", file=sys.stderr)
            return 1
        spath = (
            args.series_out
            if args.series_out is not None
            else _output_dir() / f"{_slug(spec.label)}_{args.series}_{args.series_coord}.csv"
        )
        emit_trace_series(spec, args.series, args.series_coord, spath)
        print(f"series -> {spath}")
    return 0


def _cmd_fit_g0(args: argparse.Namespace) -> int:
    init = default_params(args.algorithm) if args.init == "table" else None
    result = fit_g0(
        args.algorithm, d=args.dim, n=args.n, step2=args.step2, seed=args.seed, init=init
    )
    out = args.out if args.out is not None else _output_dir() / f"g0_{args.algorithm}.json"
    save_fit(result, out)
    print(
        f"{args.algorithm} d={args.dim} n={args.n}: loss {result.loss:.6g} "
        f"(init {result.init_loss:.6g}, {result.restarts} restarts) -> {out}"
    )
    return 0


def _cmd_datasets(args: argparse.Namespace) -> int:
    status = 0
    for name in bundled_dataset_names():
        try:
            data = bundled_dataset(name)
        except Exception as exc:
            print(f"{name}: FAILED ({exc})", file=sys.stderr)
            status = 1
            continue
        n, d = data.X.shape
        print(f"{name:>10}  N={n:<5} d={d}  labels {{0,1}} balance {data.y.mean():.3f}")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pecv",
        description="Post-process Metropolis-Hastings output with Poisson-equation control variates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="run one chain and persist its trace")
    _add_spec_flags(p, with_replicates=False)
    p.add_argument("--out", type=Path, help="output .npz path")
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("estimate", help="post-process a persisted trace")
    p.add_argument("trace", type=Path, help=".npz file written by sample")
    p.add_argument("--coords", type=_parse_coords, default=None, help='"all" or comma list')
    p.add_argument("--params", type=Path, help="fitted parameter file from fit-g0")
    p.add_argument("--theta", type=float, default=None, help="override the regression coefficient")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", type=Path, help="write the report here instead of stdout")
    p.set_defaults(fn=_cmd_estimate)

    p = sub.add_parser("experiment", help="replicated study with variance-reduction factors")
    _add_spec_flags(p, with_replicates=True)
    p.add_argument("--paper-scale", action="store_true", help="default to T=100 replicates")
    p.add_argument("--out", type=Path, help="report JSON path")
    p.add_argument("--series", choices=("ergodic", "cv"), help="also emit a running-estimate series")
    p.add_argument("--series-coord", type=int, help="1-based coordinate for --series")
    p.add_argument("--series-out", type=Path)
    p.set_defaults(fn=_cmd_experiment)

    p = sub.add_parser("fit-g0", help="refit control-variate parameters on a reference chain")
    p.add_argument("--algorithm", choices=("rwm", "mala"), required=True)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--step2", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=("table", "random"), default="table")
    p.add_argument("--out", type=Path, help="fitted parameter JSON path")
    p.set_defaults(fn=_cmd_fit_g0)

    p = sub.add_parser("datasets", help="list and verify the bundled benchmark tables")
    p.set_defaults(fn=_cmd_datasets)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
