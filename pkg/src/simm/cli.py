"""``simm`` command line: ``fit``, ``simulate`` and ``infer``.

Exit codes: 0 success, 2 usage error, 3 data or file error, 4 fit did not
converge (the report is still written), 5 numerical failure. Errors are
printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConvergenceError, DataError, SimmError, UsageError
from .gee import fit
from .inference import confidence_region, coordinate_intervals
from .io import (
    build_config,
    config_keys,
    dumps,
    fit_report,
    human,
    ingest_csv,
    load_fit,
    parse_pairs,
    read_config,
    read_matrix,
)
from .model import FitConfig
from .simulation import SimulationConfig, records_csv, run_study, summary_report

SIMULATE_KEYS = {"replications", "threads"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _settings(args, allowed) -> dict:
    pairs = read_config(args.config) if args.config else {}
    pairs.update(parse_pairs(args.set or []))
    unknown = sorted(set(pairs) - allowed)
    if unknown:
        raise UsageError(f"unknown configuration key(s): {', '.join(unknown)}")
    return pairs


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from None


def _add_config_flags(p):
    p.add_argument("--config", help="flat key = value file with FitConfig/SimulationConfig fields")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="simm", description="Single-index mixed models for balanced longitudinal data.")
    parser.add_argument("--version", action="version", version=f"simm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit", help="fit the model to a long-format CSV file")
    p.add_argument("data", help="CSV with one row per (subject, measurement index)")
    p.add_argument("--subject", default="subject", help="subject id column (default: subject)")
    p.add_argument("--index", default="index", help="measurement index column, values 1..m (default: index)")
    p.add_argument("--response", default="y", help="response column (default: y)")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    _add_config_flags(p)

    p = sub.add_parser("simulate", help="run a Monte Carlo study")
    p.add_argument("--replications", type=int, help="number of replications (default: 100)")
    p.add_argument("--seed", type=int, help="master seed (default: the config's seed)")
    p.add_argument("--threads", type=int, help="worker processes; results do not depend on it")
    p.add_argument("--out", help="directory for records.csv and summary.txt")
    _add_config_flags(p)

    p = sub.add_parser("infer", help="contrast confidence regions from a saved fit report")
    p.add_argument("report", help="JSON report written by `simm fit`")
    p.add_argument("--contrast", required=True, help="matrix file for H: p rows and l < p columns")
    p.add_argument("--level", type=float, help="confidence level (default: the report's)")
    p.add_argument("--beta", help="comma-separated direction to test for membership")
    p.add_argument("--out", help="write the JSON answer here instead of stdout")
    return parser


def cmd_fit(args) -> int:
    pairs = _settings(args, config_keys(FitConfig))
    config = build_config(FitConfig, pairs)
    covariates = args.covariates.split(",") if args.covariates else None
    data = ingest_csv(args.data, args.subject, args.index, args.response, covariates)
    result = fit(data, config)
    text = dumps(fit_report(result, config.level))
    if args.out:
        _write(args.out, text)
        ci = coordinate_intervals(result, config.level)
        print(f"beta = {' '.join(human(b) for b in result.beta.beta)}")
        print(f"{config.level:.0%} intervals: " + "; ".join(f"[{human(lo)}, {human(hi)}]" for lo, hi in ci))
        print(f"sigma_alpha^2 = {human(result.variance.sigma_alpha_sq)}, "
              f"sigma_eps^2 = {human(result.variance.sigma_eps_sq)}, h = {human(result.h)}")
    else:
        sys.stdout.write(text)
    if not result.converged:
        raise ConvergenceError(f"no convergence in {config.max_iterations} outer iterations; report written")
    return 0


def cmd_simulate(args) -> int:
    pairs = _settings(args, config_keys(FitConfig, SimulationConfig) | SIMULATE_KEYS)
    sim = build_config(SimulationConfig, pairs)
    fit_config = build_config(FitConfig, pairs)
    replications = args.replications if args.replications is not None else int(pairs.get("replications", 100))
    threads = args.threads if args.threads is not None else int(pairs.get("threads", 1))
    if threads < 1:
        raise UsageError("--threads must be at least 1")
    summary = run_study(sim, fit_config, replications, args.seed, threads)
    report = summary_report(summary)
    if args.out:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create {out}: {exc.strerror}") from None
        _write(out / "records.csv", records_csv(summary))
        _write(out / "summary.txt", report)
        for key, value in summary.metrics.items():
            print(f"{key}: {human(value)}")
    else:
        sys.stdout.write(report)
    return 0


def cmd_infer(args) -> int:
    saved = load_fit(args.report)
    p = saved.beta.p
    M = read_matrix(args.contrast)
    if M.shape[0] == p:
        H = M
    elif M.shape[1] == p:
        H = M.T  # one contrast per line
    else:
        raise UsageError(f"contrast matrix of shape {M.shape} does not have p={p} rows or columns")
    level = saved.level if args.level is None else args.level
    if not 0 < level < 1:
        raise UsageError("--level must lie in (0, 1)")
    region = confidence_region(saved, H, level)
    answer = {
        "contrast": H,
        "df": region.df,
        "level": level,
        "estimate": H.T @ saved.beta.beta,
        "covariance": region.inner,
        "critical_value": region.critical,
    }
    if region.df == 1:
        answer["interval"] = list(region.interval())
    if args.beta:
        try:
            b = np.array([float(v) for v in args.beta.split(",")])
        except ValueError:
            raise UsageError(f"--beta: cannot parse {args.beta!r}") from None
        if b.size != p:
            raise UsageError(f"--beta needs {p} values, got {b.size}")
        answer["statistic"] = region.statistic(b)
        answer["inside"] = region.contains(b)
    text = dumps(answer)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "infer": cmd_infer}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except SimmError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        sys.stderr.write(json.dumps(err) + "\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
