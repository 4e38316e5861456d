"""Command-line entry point: simulate, estimate, experiment and oracle-check.

Exit status is 0 on success, 1 for usage or input errors and 2 for numerical
failures (non-convergence, positivity, failed oracle checks). All randomness
comes from ``--seed``; the same arguments give byte-identical output.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import os
import sys
from typing import Sequence

from .aipw import (EstimatorConfig, Pipeline, TargetFunctional, _csv_text, _fmt, bootstrap_ci,
                   estimate_complete_case, format_reports)
from .errors import DataError, NSCError
from .oracle import run_oracle_suite
from .patterns import ingest_csv, write_csv
from .simgen import MISSPEC, get_setting, replicate_rng, run_experiment

SETTINGS = ("gauss1", "gauss2", "binary1", "binary2")
BASIS_KINDS = ("const", "linear", "main", "saturated", "x_only", "none")
SUMMARY_COLUMNS = ("setting", "misspec", "method", "n", "trials", "truth", "mean", "bias",
                   "percent_bias", "mse", "variance", "mc_se", "n_ok", "failure_rate",
                   "or_fallback_rate", "cc_mean", "mean_se2")
TRIAL_COLUMNS = ("trial", "estimate", "se", "cc_estimate", "n_complete", "n_clipped",
                 "or_fallback", "status")
ORACLE_COLUMNS = ("law", "check", "value", "limit", "kind", "passed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def format_table(columns: Sequence[str], rows: Sequence[Sequence], fmt: str = "csv") -> str:
    """Render rows as CSV or as a right-aligned text table."""
    cells = [[_fmt(v) for v in row] for row in rows]
    if fmt == "csv":
        return _csv_text(columns, cells)
    table = [list(columns)] + cells
    widths = [max(len(r[k]) for r in table) for k in range(len(columns))]
    return "\n".join("  ".join(c.rjust(w) if k else c.ljust(w)
                               for k, (c, w) in enumerate(zip(r, widths))) for r in table) + "\n"


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _threads(value: int | None) -> int:
    return value if value else (os.cpu_count() or 1)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("csv", "text"), default="csv", help="output format")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: all cores); results do not depend on it")


def _add_estimator(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("estimator")
    for name, default in (("delta", "linear"), ("baseline", "linear"), ("mu", "linear"),
                          ("interaction", "linear"), ("pm", "linear")):
        g.add_argument(f"--{name}", choices=BASIS_KINDS, default=None,
                       help=f"basis for the {name} model (default: {default})")
    g.add_argument("--or-method", choices=("dr", "ml"), default=None)
    g.add_argument("--pm-mode", choices=("ratio", "separate"), default=None)
    g.add_argument("--reference", choices=("zero", "mean"), default=None,
                   help="reference value l0 of the odds ratio")
    g.add_argument("--clip-eps", type=float, default=None, help="floor for pi_1 (default 1e-6)")
    g.add_argument("--tol", type=float, default=None, help="solver tolerance (default 1e-8)")


def _overrides(args) -> dict:
    out = {}
    for name in ("delta", "baseline", "mu", "interaction", "pm", "or_method", "pm_mode",
                 "reference", "clip_eps", "tol"):
        v = getattr(args, name)
        if v is not None:
            out[name] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="nsc-aipw", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="draw a dataset from a registered setting")
    p.add_argument("--setting", choices=SETTINGS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--output", default=None, help="masked CSV (default: stdout)")

    p = sub.add_parser("estimate", help="estimate functionals from a CSV with missing values")
    p.add_argument("--input", required=True, help="CSV with header L1..LK,X1..Xp; NA marks missing")
    p.add_argument("--functional", action="append", default=None,
                   help="mean:L3, product:L1,L2,L3 or cell:101 (repeatable; default mean of the last L)")
    p.add_argument("--method", choices=("aipw", "ipw", "cc"), default="aipw")
    p.add_argument("--bootstrap", type=int, default=0, metavar="B", help="percentile CI replicates")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=None, help="required with --bootstrap")
    p.add_argument("--no-variance", action="store_true", help="skip the sandwich standard error")
    p.add_argument("--output", default=None)
    _add_estimator(p)
    _add_common(p)

    p = sub.add_parser("experiment", help="Monte Carlo study of a registered setting")
    p.add_argument("--setting", choices=SETTINGS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--misspec", choices=MISSPEC, default="none")
    p.add_argument("--method", choices=("aipw", "ipw"), default="aipw")
    p.add_argument("--variance", action="store_true", help="also compute sandwich SEs")
    p.add_argument("--output", default=None, help="summary file (default: stdout)")
    p.add_argument("--trials-output", default=None, help="per-trial file")
    _add_estimator(p)
    _add_common(p)

    p = sub.add_parser("oracle-check", help="exact checks on enumerated binary laws")
    p.add_argument("--all", action="store_true", help="run the full suite (the default)")
    p.add_argument("--laws", type=int, default=20)
    p.add_argument("--controls", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--summary", action="store_true", help="one row per check with the worst value")
    p.add_argument("--output", default=None)
    p.add_argument("--format", choices=("csv", "text"), default="csv")
    return ap


# -- subcommands ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be positive")
    st = get_setting(args.setting)
    data = st.sampler(args.n, replicate_rng(args.seed, 0))
    buf = io.StringIO()
    write_csv(data, buf)
    _write(buf.getvalue(), args.output)
    return 0


def cmd_estimate(args) -> int:
    if args.bootstrap and args.seed is None:
        raise UsageError("--seed is required with --bootstrap")
    try:
        with open(args.input, newline="") as fh:
            data = ingest_csv(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {args.input}: {exc.strerror}") from None
    funcs = [TargetFunctional.parse(s) for s in (args.functional or [f"mean:L{data.K}"])]
    cfg = EstimatorConfig(**_overrides(args)).with_(variance=not args.no_variance)
    reports = []
    if args.method == "cc":
        reports = [estimate_complete_case(data, f) for f in funcs]
    else:
        pipe = Pipeline(data, cfg)
        reports = [pipe.report(pipe.fit_functional(f, args.method)) for f in funcs]
    if args.bootstrap and args.method != "cc":
        reports = [dataclasses.replace(r, bootstrap_ci=bootstrap_ci(
            data, f, cfg.with_(variance=False), args.bootstrap, args.seed, args.alpha,
            _threads(args.threads), args.method)) for r, f in zip(reports, funcs)]
    _write(format_reports(reports, args.format), args.output)
    return 0


def cmd_experiment(args) -> int:
    res = run_experiment(args.setting, args.n, args.trials, args.seed, args.misspec,
                         threads=_threads(args.threads), method=args.method,
                         variance=args.variance, overrides=_overrides(args))
    s = res.summary
    row = [args.setting, args.misspec, args.method, args.n, args.trials, res.truth] + \
        [s[c] for c in SUMMARY_COLUMNS[6:]]
    _write(format_table(SUMMARY_COLUMNS, [row], args.format), args.output)
    if args.trials_output:
        rows = [[getattr(t, c) for c in TRIAL_COLUMNS] for t in res.trials]
        _write(format_table(TRIAL_COLUMNS, rows, args.format), args.trials_output)
    if s["failed"]:
        sys.stderr.write(f"trial failure rate {s['failure_rate']:.3f} exceeds 5%\n")
        return 2
    return 0


def cmd_oracle(args) -> int:
    rows = run_oracle_suite(args.laws, args.seed, args.controls)
    if args.summary:
        rows = summarize_oracle(rows)
    table = [[r[c] for c in ORACLE_COLUMNS] for r in rows]
    _write(format_table(ORACLE_COLUMNS, table, args.format), args.output)
    return 0 if all(r["passed"] for r in rows) else 2


def summarize_oracle(rows: Sequence[dict]) -> list[dict]:
    """Collapse the per-law rows to the worst value per (law family, check)."""
    groups: dict = {}
    for r in rows:
        family = "self-censoring" if r["law"].startswith("self-censoring") else "nsc"
        groups.setdefault((family, r["check"]), []).append(r)
    out = []
    for (family, check), rs in groups.items():
        pick = max if rs[0]["kind"] == "max" else min
        out.append(dict(pick(rs, key=lambda r: r["value"]), law=f"{family}(x{len(rs)})",
                        passed=all(r["passed"] for r in rs)))
    return out


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "experiment": cmd_experiment,
            "oracle-check": cmd_oracle}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"nsc-aipw: error: {exc}\n")
        return 1
    except DataError as exc:
        sys.stderr.write(f"nsc-aipw: input error: {exc}\n")
        return 1
    except NSCError as exc:
        sys.stderr.write(f"nsc-aipw: numerical failure: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
