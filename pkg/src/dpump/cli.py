"""Command line interface.

Exit codes: 0 success, 1 numeric failure, 2 usage error, 3 data error,
4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import secrets
import sys

import numpy as np

from .nonparam import DataError, PairedSample, TwoSample, private_median_test, private_sign_test
from .sim import (ConfigError, PowerConfig, Type1Config, run_power_experiment,
                  run_type1_experiment, write_csv)
from .tulap import (PrivacyBudget, SamplerError, TulapParams, tulap_cdf, tulap_quantile,
                    tulap_sample)
from .ump import NumericError, TestSpec, decide, release_statistic

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3, 4

SEED_ENV = "DPUMP_SEED"


class UsageError(Exception):
    pass


def _resolve_seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"environment variable {SEED_ENV}: not an integer: {env!r}")
    return secrets.randbits(64)


def _rng(seed):
    return np.random.default_rng(seed)


def _seed_type(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit non-negative integer")
    return v


def _grid(text):
    """Parse ``a:b:step`` (inclusive) or a comma separated list."""
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step <= 0:
                raise ValueError
            k = int(math.floor((stop - start) / step + 1e-9))
            return [round(start + i * step, 12) for i in range(k + 1)]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}; use a:b:step or a,b,c")


def _int_grid(text):
    vals = _grid(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"grid {text!r} must contain integers")
    return [int(v) for v in vals]


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _emit(record, as_json, out):
    if as_json:
        out.write(json.dumps(record) + "\n")
    else:
        out.write(" ".join(f"{k}={_fmt(v)}" for k, v in record.items()) + "\n")


def _budget(args):
    try:
        return PrivacyBudget(args.epsilon, args.delta)
    except ValueError as exc:
        flag = "--epsilon" if "epsilon" in str(exc) else "--delta"
        raise UsageError(f"argument {flag}: {exc}")


def _add_privacy(p, default_delta=True):
    p.add_argument("--epsilon", type=float, required=True, help="privacy parameter epsilon > 0")
    p.add_argument("--delta", type=float, default=0.0 if default_delta else None,
                   help="privacy parameter delta in [0, 1) (default 0)")


def _add_test_flags(p):
    p.add_argument("--alt", choices=("greater", "less"), default="greater")
    p.add_argument("--alpha", type=float, default=0.05)
    _add_privacy(p)
    p.add_argument("--seed", type=_seed_type, default=None)
    p.add_argument("--json", action="store_true", help="emit JSON instead of key=value")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dpump", description="Differentially private UMP tests for binomial data.")
    sub = parser.add_subparsers(dest="command", required=True)

    tp = sub.add_parser("tulap", help="Tulap distribution: sample, cdf, quantile")
    tp.add_argument("action", choices=("sample", "cdf", "quantile"))
    tp.add_argument("--m", type=float, default=0.0, help="location")
    g = tp.add_mutually_exclusive_group(required=True)
    g.add_argument("--b", type=float, help="base in (0, 1)")
    g.add_argument("--epsilon", type=float, help="sets b = exp(-epsilon)")
    g = tp.add_mutually_exclusive_group(required=True)
    g.add_argument("--q", type=float, help="truncation mass in [0, 1)")
    g.add_argument("--delta", type=float, help="sets q from (epsilon, delta)")
    tp.add_argument("--x", type=float, nargs="+", help="points for cdf")
    tp.add_argument("--u", type=float, nargs="+", help="probabilities for quantile")
    tp.add_argument("--count", type=int, default=1, help="number of draws for sample")
    tp.add_argument("--seed", type=_seed_type, default=None)

    t = sub.add_parser("test", help="private one-sided test on a count")
    t.add_argument("--n", type=int, required=True)
    t.add_argument("--x", type=int, required=True, help="true count (never printed)")
    t.add_argument("--theta0", type=float, required=True)
    _add_test_flags(t)

    s = sub.add_parser("signtest", help="private sign test on a paired CSV file")
    s.add_argument("--file", required=True)
    s.add_argument("--theta0", type=float, default=0.5)
    s.add_argument("--ties", choices=("drop", "error"), default="drop")
    _add_test_flags(s)

    md = sub.add_parser("mediantest", help="private median test on a two-column CSV file")
    md.add_argument("--file", required=True)
    md.add_argument("--duplicates", choices=("error", "jitter"), default="error")
    _add_test_flags(md)

    sm = sub.add_parser("simulate", help="Monte Carlo power or type I error, written as CSV")
    sm.add_argument("experiment", choices=("power", "type1"))
    sm.add_argument("--out", required=True, help="output CSV path")
    sm.add_argument("--n", type=int, default=30, help="sample size (type1)")
    sm.add_argument("--n-grid", type=_int_grid, default=None,
                    help="sample sizes (power), e.g. 10:100:10")
    sm.add_argument("--theta0", type=float, default=0.9, help="null proportion (power)")
    sm.add_argument("--theta-true", type=float, default=0.95, help="true proportion (power)")
    sm.add_argument("--theta0-grid", type=_grid, default=None,
                    help="null proportions (type1), e.g. 0.1:0.9:0.1")
    sm.add_argument("--alpha", type=float, default=0.05)
    _add_privacy(sm)
    sm.add_argument("--replicates", type=int, default=None,
                    help="replicates per point (default 10000 power, 20000 type1)")
    sm.add_argument("--full", action="store_true", help="use 100000 replicates per point")
    sm.add_argument("--variance-mode", choices=("paper_quarter", "plug_in"),
                    default="paper_quarter", help="normal approximation variance")
    sm.add_argument("--methods", default=None,
                    help="comma separated subset of dp_ump,normal_approx,nonprivate_ump")
    sm.add_argument("--workers", type=int, default=1)
    sm.add_argument("--seed", type=_seed_type, default=None)
    return parser


def _cmd_tulap(args, out, err):
    if args.b is not None:
        if not (0.0 < args.b < 1.0):
            raise UsageError(f"argument --b: must lie in (0, 1), got {args.b!r}")
        b = args.b
    else:
        if not (args.epsilon > 0 and math.isfinite(args.epsilon)):
            raise UsageError(f"argument --epsilon: must be positive, got {args.epsilon!r}")
        b = math.exp(-args.epsilon)
    if args.q is not None:
        if not (0.0 <= args.q < 1.0):
            raise UsageError(f"argument --q: must lie in [0, 1), got {args.q!r}")
        q = args.q
    else:
        if not (0.0 <= args.delta < 1.0):
            raise UsageError(f"argument --delta: must lie in [0, 1), got {args.delta!r}")
        q = PrivacyBudget(-math.log(b), args.delta).q
    params = TulapParams(m=args.m, b=b, q=q)

    if args.action == "cdf":
        if not args.x:
            raise UsageError("argument --x: required for cdf")
        for x in args.x:
            out.write(f"{_fmt(float(tulap_cdf(params, x)))}\n")
    elif args.action == "quantile":
        if not args.u:
            raise UsageError("argument --u: required for quantile")
        for u in args.u:
            if not (0.0 < u < 1.0):
                raise UsageError(f"argument --u: must lie in (0, 1), got {u!r}")
            out.write(f"{_fmt(tulap_quantile(params, u))}\n")
    else:
        if args.count < 1:
            raise UsageError(f"argument --count: must be positive, got {args.count!r}")
        seed = _resolve_seed(args.seed)
        err.write(f"seed={seed}\n")
        for v in tulap_sample(params, _rng(seed), size=args.count):
            out.write(f"{_fmt(float(v))}\n")


def _spec(args, n, theta0, budget):
    try:
        return TestSpec(n=n, theta0=theta0, alternative=args.alt, alpha=args.alpha, budget=budget)
    except ValueError as exc:
        raise UsageError(str(exc))


def _report(outcome, release, seed, extra=None):
    record = {"z": float(release.z), "p_value": float(outcome.p_value),
              "reject": bool(outcome.reject), "m": float(outcome.threshold_m)}
    if extra:
        record.update(extra)
    record["seed"] = seed
    return record


def _cmd_test(args, out, err):
    budget = _budget(args)
    if args.n < 1:
        raise UsageError(f"argument --n: must be a positive integer, got {args.n!r}")
    if not (0 <= args.x <= args.n):
        raise UsageError(f"argument --x: must lie in [0, {args.n}], got {args.x!r}")
    spec = _spec(args, args.n, args.theta0, budget)
    seed = _resolve_seed(args.seed)
    release = release_statistic(args.x, args.n, budget, _rng(seed))
    outcome = decide(spec, release)
    _emit(_report(outcome, release, seed), args.json, out)


def _read_two_columns(path):
    """Rows of two floats with 1-based file line numbers; an optional header is skipped."""
    with open(path, newline="", encoding="utf-8") as fh:
        raw = list(csv.reader(fh))
    rows, lines = [], []
    for lineno, rec in enumerate(raw, start=1):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != 2:
            raise DataError(f"row {lineno}: expected 2 columns, got {len(rec)}", index=lineno)
        try:
            vals = (float(rec[0]), float(rec[1]))
        except ValueError:
            if not rows and lineno == 1:
                continue  # header
            raise DataError(f"row {lineno}: non-numeric value", index=lineno)
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"row {lineno}: non-finite value", index=lineno)
        rows.append(vals)
        lines.append(lineno)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return rows, lines


def _theta0_check(theta0):
    if not (0.0 < theta0 < 1.0):
        raise UsageError(f"argument --theta0: must lie in (0, 1), got {theta0!r}")


def _cmd_signtest(args, out, err):
    budget = _budget(args)
    _theta0_check(args.theta0)
    _spec(args, 1, args.theta0, budget)
    rows, lines = _read_two_columns(args.file)
    seed = _resolve_seed(args.seed)
    try:
        outcome, release = private_sign_test(PairedSample(rows), args.alt, args.alpha, budget,
                                             _rng(seed), theta0=args.theta0,
                                             tie_policy=args.ties)
    except DataError as exc:
        if exc.index is not None and "tied pair" in str(exc):
            raise DataError(f"row {lines[exc.index]}: tied pair (x == y)", index=lines[exc.index])
        raise
    _emit(_report(outcome, release, seed, {"n_eff": release.n}), args.json, out)


def _cmd_mediantest(args, out, err):
    budget = _budget(args)
    _spec(args, 1, 0.5, budget)
    rows, lines = _read_two_columns(args.file)
    xs = [r[0] for r in rows]
    ys = [r[1] for r in rows]
    seed = _resolve_seed(args.seed)
    try:
        outcome, release = private_median_test(TwoSample(xs, ys), args.alt, args.alpha, budget,
                                               _rng(seed), duplicates=args.duplicates)
    except DataError as exc:
        if exc.index is not None:
            n = len(rows)
            raise DataError(f"row {lines[exc.index % n]}: {exc}", index=lines[exc.index % n])
        raise
    _emit(_report(outcome, release, seed, {"n_eff": release.n}), args.json, out)


def _cmd_simulate(args, out, err):
    budget = _budget(args)
    seed = _resolve_seed(args.seed)
    methods = None
    if args.methods:
        methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    try:
        if args.experiment == "power":
            reps = 100_000 if args.full else (args.replicates or 10_000)
            cfg = PowerConfig(n_grid=args.n_grid or list(range(10, 101, 10)),
                              theta_true=args.theta_true, theta0=args.theta0, alpha=args.alpha,
                              budget=budget, replicates=reps, seed=seed,
                              variance_mode=args.variance_mode,
                              **({"methods": methods} if methods else {}))
            rows = run_power_experiment(cfg, workers=args.workers)
        else:
            reps = 100_000 if args.full else (args.replicates or 20_000)
            grid = args.theta0_grid or [round(0.1 * i, 1) for i in range(1, 10)]
            cfg = Type1Config(n=args.n, theta0_grid=grid, alpha=args.alpha, budget=budget,
                              replicates=reps, seed=seed, variance_mode=args.variance_mode,
                              **({"methods": methods} if methods else {}))
            rows = run_type1_experiment(cfg, workers=args.workers)
    except ConfigError as exc:
        raise UsageError(str(exc))
    try:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_csv(rows, fh)
    except OSError as exc:
        raise IOError(f"cannot write {args.out}: {exc.strerror}")
    out.write(f"seed={seed} rows={len(rows)} out={args.out}\n")


COMMANDS = {
    "tulap": _cmd_tulap,
    "test": _cmd_test,
    "signtest": _cmd_signtest,
    "mediantest": _cmd_mediantest,
    "simulate": _cmd_simulate,
}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args, out, err)
    except UsageError as exc:
        err.write(f"dpump {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        err.write(f"dpump {args.command}: data error: {exc}\n")
        return EXIT_DATA
    except OSError as exc:
        err.write(f"dpump {args.command}: I/O error: {exc}\n")
        return EXIT_IO
    except (NumericError, SamplerError, ArithmeticError) as exc:
        err.write(f"dpump {args.command}: numeric error: {exc}\n")
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
