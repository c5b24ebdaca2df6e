"""Command-line interface.

Exit codes: 0 success, 1 a ``--check`` assertion failed, 2 usage error,
3 data error (unreadable or invalid input files, degenerate data).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time

import numpy as np

from . import __version__
from .calibration import calibrate_aggregate, calibrate_scalar, multiplicity_adjust
from .io import RunReport, load_matrix, load_stack
from .metrics import METRIC_NAMES, MetricSpec
from .synthlab import RUNNERS

USAGE, DATA, CHECK = 2, 3, 1


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _alpha(text):
    try:
        a = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha must be a number, got {text!r}")
    if not 0 < a < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {text}")
    return a


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if v < 0:
        raise argparse.ArgumentTypeError(f"seed must be >= 0, got {v}")
    return v


def _sigma(text):
    if text == "median":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"sigma must be a positive number or 'median', got {text!r}")
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"sigma must be positive, got {text}")
    return v


def _add_metric_flags(p):
    p.add_argument("--metric", required=True, help=f"one of: {', '.join(METRIC_NAMES)}")
    p.add_argument("--k", type=_positive_int, help="neighbourhood size for kNN metrics")
    p.add_argument("--sigma", type=_sigma, help="RBF bandwidth, or 'median' (default)")
    p.add_argument("--distance", choices=("euclidean", "cosine", "correlation"))
    p.add_argument("--permutations", type=_positive_int, default=200, help="K null replicates")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--no-nulls", action="store_true", help="omit the null-score vector")
    p.add_argument("--threads", type=_positive_int, help="worker cap (default REPSIM_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="repsim", description="Null-calibrated representational similarity.")
    ap.add_argument("--version", action="version", version=f"repsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="calibrate one X/Y similarity score")
    p.add_argument("--x", required=True, help="matrix file (csv, npy or rawbin)")
    p.add_argument("--y", required=True)
    _add_metric_flags(p)

    p = sub.add_parser("calibrate-agg", help="aggregation-aware calibration over two layer stacks")
    p.add_argument("--stack-a", required=True, help="directory of layer_<i>.<ext> files")
    p.add_argument("--stack-b", required=True)
    p.add_argument("--aggregator", choices=("max", "mean", "topk"), default="max")
    p.add_argument("--topk", type=int)
    _add_metric_flags(p)

    p = sub.add_parser("experiment", help="run a synthetic experiment")
    p.add_argument("name", choices=sorted(RUNNERS))
    p.add_argument("--config", help="JSON file of runner keyword arguments")
    p.add_argument("--trials", type=_positive_int)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--permutations", type=_positive_int, dest="K")
    p.add_argument("--alpha", type=_alpha)
    p.add_argument("--threads", type=_positive_int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--check", action="store_true", help="evaluate built-in assertions")

    p = sub.add_parser("adjust", help="BH or Holm adjustment of a p-value file")
    p.add_argument("--pvalues", required=True, help="one p-value per line")
    p.add_argument("--method", choices=("bh", "holm"), default="bh")
    p.add_argument("--out")
    return ap


def _spec(args) -> MetricSpec:
    if args.metric not in METRIC_NAMES:
        raise UsageError(f"unknown metric {args.metric!r}; valid names: {', '.join(METRIC_NAMES)}")
    params = {"k": args.k, "distance": args.distance}
    if args.sigma is not None:
        params["sigma"] = args.sigma
    try:
        return MetricSpec.from_name(args.metric, **params)
    except ValueError as exc:
        raise UsageError(str(exc))


def _emit(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _emit_report(report: RunReport, args):
    _emit(report.to_json() if args.format == "json" else report.to_csv(), args.out)


def _load(path):
    try:
        return load_matrix(path)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc))


def cmd_calibrate(args) -> int:
    spec = _spec(args)
    X, Y = _load(args.x), _load(args.y)
    if X.shape[0] != Y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    t0 = time.perf_counter()
    try:
        res = calibrate_scalar(X, Y, spec, K=args.permutations, alpha=args.alpha,
                               seed=args.seed, n_jobs=args.threads)
    except ValueError as exc:
        raise DataError(str(exc))
    report = RunReport(
        kind="scalar",
        inputs={"paths": {"x": args.x, "y": args.y},
                "shapes": {"x": list(X.shape), "y": list(Y.shape)}},
        metric=spec.to_dict(), K=args.permutations, alpha=args.alpha, seed=args.seed,
        result=res.to_dict(include_nulls=not args.no_nulls),
        wall_clock_seconds=time.perf_counter() - t0)
    _emit_report(report, args)
    return 0


def cmd_calibrate_agg(args) -> int:
    spec = _spec(args)
    if args.aggregator == "topk":
        if args.topk is None or args.topk < 1:
            raise UsageError(f"--aggregator topk needs --topk >= 1, got {args.topk}")
    elif args.topk is not None:
        raise UsageError("--topk only applies to --aggregator topk")
    try:
        A, B = load_stack(args.stack_a), load_stack(args.stack_b)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc))
    if A[0].shape[0] != B[0].shape[0]:
        raise DataError(f"stack A has {A[0].shape[0]} samples but stack B has {B[0].shape[0]}")
    if args.aggregator == "topk" and args.topk > len(A) * len(B):
        raise UsageError(f"--topk {args.topk} exceeds the {len(A) * len(B)} layer pairs")
    t0 = time.perf_counter()
    try:
        res = calibrate_aggregate(A, B, spec, args.aggregator, K=args.permutations,
                                  alpha=args.alpha, seed=args.seed, topk=args.topk,
                                  n_jobs=args.threads)
    except ValueError as exc:
        raise DataError(str(exc))
    report = RunReport(
        kind="aggregate",
        inputs={"paths": {"stack_a": args.stack_a, "stack_b": args.stack_b},
                "shapes": {"stack_a": [list(L.shape) for L in A],
                           "stack_b": [list(L.shape) for L in B]}},
        metric=spec.to_dict(), K=args.permutations, alpha=args.alpha, seed=args.seed,
        result=res.to_dict(include_nulls=not args.no_nulls),
        wall_clock_seconds=time.perf_counter() - t0)
    _emit_report(report, args)
    return 0


def _checks(name, table) -> list[tuple[str, bool]]:
    rows = table.rows()
    if name == "nulldrift":
        return [("calibrated H0 mean ≤ 0.01", all(r["cal_mean"] <= 0.01 for r in rows))]
    if name == "guarantees":
        t1 = [r for r in rows if r["kind"] == "type1"]
        return [("H0 rejection rate ≤ α + 3σ_MC", all(r["rejection_rate"] <= r["type1_bound"] for r in t1))]
    if name == "depth":
        return [("aggregation-aware calibrated mean ≤ 0.01", all(r["agg_cal_mean"] <= 0.01 for r in rows))]
    if name == "budget":
        big = [r for r in rows if r["K"] >= 100]
        return [("calibrated H0 mean ≤ 0.02 for K ≥ 100", all(r["cal_mean"] <= 0.02 for r in big))]
    sel = [r for r in rows if r["variant"] in ("gated", "null-centered", "ari")]
    at4 = [r for r in sel if r["d_over_n"] == 4] or sel
    return [("gated, null-centered and ARI-style H0 |mean| ≤ 0.02", all(abs(r["mean"]) <= 0.02 for r in at4))]


def cmd_experiment(args) -> int:
    runner = RUNNERS[args.name]
    config = {}
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}")
        try:
            config = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"invalid JSON in {args.config} at line {exc.lineno}, column {exc.colno}: {exc.msg}")
        if not isinstance(config, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
    for key in ("trials", "seed", "K", "alpha"):
        if getattr(args, key) is not None:
            config[key] = getattr(args, key)
    if args.threads is not None:
        config["n_jobs"] = args.threads
    if args.name == "budget":
        if "trials" in config:
            config["seeds"] = config.pop("trials")
        if "K" in config:
            config["K_list"] = [config.pop("K")]
    import inspect

    allowed = set(inspect.signature(runner).parameters)
    unknown = sorted(set(config) - allowed)
    if unknown:
        raise UsageError(f"unknown config keys for {args.name}: {', '.join(unknown)}; "
                         f"allowed: {', '.join(sorted(allowed))}")
    try:
        table = runner(**config)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}")
    fmt = args.format or ("json" if args.out and args.out.endswith(".json") else "csv")
    _emit(table.to_json() if fmt == "json" else table.to_csv(), args.out)
    if args.check:
        ok = True
        for label, passed in _checks(args.name, table):
            print(f"{label}: {'PASS' if passed else 'FAIL'}")
            ok &= passed
        return 0 if ok else CHECK
    return 0


def cmd_adjust(args) -> int:
    try:
        with open(args.pvalues) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(str(exc))
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise DataError(f"{args.pvalues}: no p-values")
    p = []
    for i, line in enumerate(lines, start=1):
        try:
            v = float(line)
        except ValueError:
            raise DataError(f"{args.pvalues}: line {i}: not a number: {line!r}")
        if not 0 <= v <= 1:
            raise DataError(f"{args.pvalues}: line {i}: p-value {line.strip()} outside [0, 1]")
        p.append(v)
    adj = multiplicity_adjust(np.array(p), args.method)
    _emit("\n".join(format(v, ".15g") for v in adj), args.out)
    return 0


COMMANDS = {
    "calibrate": cmd_calibrate,
    "calibrate-agg": cmd_calibrate_agg,
    "experiment": cmd_experiment,
    "adjust": cmd_adjust,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"repsim: error: {exc}", file=sys.stderr)
        return USAGE
    except DataError as exc:
        print(f"repsim: data error: {exc}", file=sys.stderr)
        return DATA


if __name__ == "__main__":
    sys.exit(main())
