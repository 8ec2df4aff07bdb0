"""Command-line interface: ``subtail {estimate,bound,detect,describe,simulate}``.

Every report echoes its fully resolved configuration. Exit codes: 0 success,
2 configuration error, 3 data error, 4 statistical degeneracy.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import logging
import math
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, simlab
from .detect import DEFAULT_LIMIT, screen
from .errors import ConfigError, DataError, DegeneracyError, SubtailError
from .estimators import (
    METHODS,
    AmlEstimate,
    averaged_estimate,
    empirical_quantile,
    per_subsample_thresholds,
    real_data_level,
    threshold_level,
)
from .inference import NormalRange, SideFit, bound_from_params, confidence_interval, normal_range
from .sampler import DEFAULT_MISSING_TOKENS, SubsamplePlan, describe, draw_subsamples, open_source

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DEGENERATE = 0, 2, 3, 4

log = logging.getLogger("subtail")


def jsonable(obj):
    """Plain JSON types; non-finite floats become null."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dump_json(obj, path=None):
    # repr-based float output is the shortest string that round-trips exactly.
    text = json.dumps(jsonable(obj), indent=2, allow_nan=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
    return text


def _timestamp():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# --- shared option groups -------------------------------------------------


def _add_source_args(p):
    g = p.add_argument_group("data source")
    g.add_argument("--input", required=True, help="data file")
    g.add_argument("--format", choices=("f64le", "csv"), default="f64le",
                   help="little-endian float64 records or delimited text (default f64le)")
    g.add_argument("--column", default="0", help="csv column index or header name (default 0)")
    g.add_argument("--delimiter", default=",", help="csv delimiter (default ',')")
    g.add_argument("--header", action=argparse.BooleanOptionalAction, default=None,
                   help="csv has a header row (default: yes iff --column is a name)")
    g.add_argument("--missing", default=",NA",
                   help="comma-separated missing-value tokens (default: empty string and NA)")


def _source(args):
    tokens = tuple(args.missing.split(",")) if args.missing is not None else DEFAULT_MISSING_TOKENS
    return open_source(args.input, args.format, args.column, args.delimiter, args.header, tokens)


def _source_config(args):
    return {"input": args.input, "format": args.format, "column": args.column,
            "delimiter": args.delimiter, "header": args.header, "missing": args.missing.split(",")}


def _add_fit_args(p, need_sampling=True):
    g = p.add_argument_group("estimation")
    g.add_argument("--n", type=int, required=need_sampling, help="subsample size")
    g.add_argument("--K", type=int, required=need_sampling, help="number of subsamples")
    g.add_argument("--seed", type=int, default=0, help="64-bit sampling seed (default 0)")
    g.add_argument("--method", choices=METHODS, default="aml")
    g.add_argument("--threshold", default="per-subsample:auto",
                   help="design:GAMMA,DELTA | level:P | per-subsample:P | value:U; "
                        "P may be 'auto' for 1-n^(-3/5) (default per-subsample:auto)")
    g.add_argument("--shift", type=float, default=0.0, help="constant added before estimation")


def parse_threshold(spec: str, n: int) -> tuple[str, float]:
    """Resolve a threshold spec to ``(mode, level_or_value)``."""
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    arg = arg.strip()
    try:
        if kind == "design":
            gamma, delta = (float(x) for x in arg.split(","))
            return "global", threshold_level(n, gamma, delta)
        if kind in ("level", "per-subsample"):
            level = real_data_level(n) if arg in ("", "auto") else float(arg)
            if not 0 < level < 1:
                raise ConfigError(f"threshold level must lie in (0, 1): {spec!r}")
            return ("global" if kind == "level" else "per-subsample"), level
        if kind == "value":
            return "value", float(arg)
    except ValueError as exc:
        raise ConfigError(f"cannot parse threshold spec {spec!r}") from exc
    raise ConfigError(f"unknown threshold spec {spec!r}")


def fit_side(rows: np.ndarray, mode: str, param: float, method: str) -> AmlEstimate:
    """Fit one side given (K, n) transformed subsample values."""
    if mode == "per-subsample":
        u = per_subsample_thresholds(rows, param)
    elif mode == "global":
        u = empirical_quantile(rows, param)
    else:
        u = param
    return averaged_estimate(rows, u, method)


def estimate_report(est: AmlEstimate, alpha: float) -> dict:
    try:
        ci = confidence_interval(est, alpha)
        ci_d = {"lower": ci.lower, "upper": ci.upper, "level": ci.level}
    except DegeneracyError as exc:
        ci_d = {"error": str(exc)}
    return {
        "gamma_hat": est.gamma_hat, "ci": ci_d, "n": est.n, "K": est.K, "u": est.threshold,
        "threshold_mode": est.threshold_mode, "n_star_u": est.total_exceedances,
        "alpha_u_hat": est.alpha_u_hat, "method": est.method,
        "per_subsample": [{"k": k, "gamma_hat": e.gamma_hat, "n_u": e.exceedance_count, "u": e.threshold}
                          for k, e in enumerate(est.per_subsample)],
    }


def _draw(args, source):
    plan = SubsamplePlan(args.n, args.K, args.seed)
    return draw_subsamples(source, plan).subsamples


# --- commands -------------------------------------------------------------


def cmd_estimate(args):
    source = _source(args)
    mode, param = parse_threshold(args.threshold, args.n)
    rows = _draw(args, source)
    sign = -1.0 if args.negate else 1.0
    est = fit_side(sign * rows + args.shift, mode, param, args.method)
    report = estimate_report(est, args.alpha)
    report["config"] = {**_source_config(args), "n": args.n, "K": args.K, "seed": args.seed,
                        "method": args.method, "threshold": args.threshold,
                        "threshold_resolved": {"mode": mode, "value": param},
                        "shift": args.shift, "negate": args.negate, "alpha": args.alpha}
    report["records"] = {"N": source.count().N, "missing": source.count().missing}
    report["generated_at"] = _timestamp()
    dump_json(report, args.out)
    return EXIT_OK


def _side_from_json(d: dict) -> AmlEstimate:
    try:
        return AmlEstimate(gamma_hat=float(d["gamma_hat"]), per_subsample=(),
                           total_exceedances=int(d.get("n_star_u", 0)),
                           alpha_u_hat=float(d["alpha_u_hat"]), n=int(d.get("n", 0)),
                           K=int(d.get("K", 0)), threshold=float(d["u"]),
                           method=d.get("method", "aml"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"estimate JSON lacks gamma_hat/u/alpha_u_hat: {exc}") from exc


def _parse_params(text: str) -> AmlEstimate:
    try:
        kv = {k.strip(): float(v) for k, v in (item.split("=") for item in text.split(","))}
    except ValueError as exc:
        raise ConfigError(f"--params expects gamma=..,u=..,alpha_u=..: {text!r}") from exc
    missing = {"gamma", "u", "alpha_u"} - set(kv)
    if missing:
        raise ConfigError(f"--params missing {sorted(missing)}")
    return AmlEstimate(kv["gamma"], (), 0, kv["alpha_u"], 0, 0, kv["u"])


def range_report(nr: NormalRange) -> dict:
    def side(s: SideFit | None):
        return None if s is None else dataclasses.asdict(s)

    return {"upper_bound": nr.upper_bound, "lower_bound": nr.lower_bound, "tau": nr.tau,
            "shift": nr.shift, "lower_shift": nr.lower_shift,
            "provenance": {"upper": side(nr.upper_fit), "lower": side(nr.lower_fit)}}


def range_from_json(d: dict) -> NormalRange:
    try:
        up, lo = d.get("upper_bound"), d.get("lower_bound")
        return NormalRange(None if up is None else float(up), None if lo is None else float(lo),
                           float(d.get("tau", math.nan)), float(d.get("shift", 0.0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed range JSON: {exc}") from exc


def cmd_bound(args):
    lower_shift = args.shift if args.lower_shift is None else args.lower_shift
    cfg = {"tau": args.tau, "two_sided": args.two_sided, "shift": args.shift, "lower_shift": lower_shift}
    upper = lower = None
    if args.params:
        upper = _parse_params(args.params)
        cfg["params"] = args.params
        if args.two_sided:
            raise ConfigError("--two-sided needs a data source or --lower-estimate, not --params")
    elif args.estimate:
        upper = _side_from_json(json.loads(Path(args.estimate).read_text()))
        cfg["estimate"] = args.estimate
        if args.lower_estimate:
            lower = _side_from_json(json.loads(Path(args.lower_estimate).read_text()))
            cfg["lower_estimate"] = args.lower_estimate
        elif args.two_sided:
            raise ConfigError("--two-sided with --estimate also needs --lower-estimate")
    else:
        if args.input is None or args.n is None or args.K is None:
            raise ConfigError("give --params, --estimate, or a data source with --input/--n/--K")
        source = _source(args)
        mode, param = parse_threshold(args.threshold, args.n)
        rows = _draw(args, source)
        upper = fit_side(rows + args.shift, mode, param, args.method)
        if args.two_sided:
            lower = fit_side(-rows + lower_shift, mode, param, args.method)
        cfg.update(_source_config(args), n=args.n, K=args.K, seed=args.seed, method=args.method,
                   threshold=args.threshold, threshold_resolved={"mode": mode, "value": param})
    nr = normal_range(upper, lower, args.tau, args.shift, lower_shift if lower is not None else None)
    report = range_report(nr)
    report["expected_fraction"] = args.tau * (2 if lower is not None else 1)
    report["config"] = cfg
    report["generated_at"] = _timestamp()
    dump_json(report, args.out)
    return EXIT_OK


def cmd_detect(args):
    source = _source(args)
    rd = json.loads(Path(args.range).read_text())
    nr = range_from_json(rd)
    found = screen(source, nr, limit=args.limit)
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="")
    try:
        w = csv.writer(out)
        w.writerow(["index", "value"])
        for i, v in zip(found.indices.tolist(), found.values.tolist()):
            w.writerow([i, repr(v)])
    finally:
        if out is not sys.stdout:
            out.close()
    summary = {
        "count": found.count, "fraction": found.fraction, "scanned": found.scanned,
        "bounds": {"lower": nr.lower_bound, "upper": nr.upper_bound},
        "tau": nr.tau, "expected_fraction": rd.get("expected_fraction"),
        "overflow": found.overflow, "stored": int(found.indices.size),
        "config": {**_source_config(args), "range": args.range, "limit": args.limit},
        "generated_at": _timestamp(),
    }
    if args.summary:
        dump_json(summary, args.summary)
    elif args.out in (None, "-"):
        sys.stderr.write(json.dumps(jsonable(summary), indent=2) + "\n")
    else:
        dump_json(summary)
    return EXIT_OK


def cmd_describe(args):
    source = _source(args)
    d = describe(source, seed=args.seed)
    report = dataclasses.asdict(d)
    report["config"] = {**_source_config(args), "seed": args.seed}
    report["generated_at"] = _timestamp()
    dump_json(report, args.out)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variable", "N", "missing", "mean", "median", "min", "max", "kurtosis",
                        "median_approximate"])
            w.writerow([args.name or str(args.column), d.N, d.missing, repr(d.mean), repr(d.median),
                        repr(d.min), repr(d.max), repr(d.kurtosis), d.median_approximate])
    return EXIT_OK


def bundled_configs() -> dict[str, str]:
    root = resources.files("subtail") / "configs"
    return {p.name[:-5]: p.name for p in root.iterdir() if p.name.endswith(".json")}


def load_config(ref: str) -> tuple[str, simlab.ExperimentConfig]:
    path = Path(ref)
    if path.exists():
        text, name = path.read_text(), path.stem
    else:
        stem = ref[:-5] if ref.endswith(".json") else ref
        if stem not in bundled_configs():
            raise ConfigError(f"no config file or bundled config named {ref!r}")
        text = (resources.files("subtail") / "configs" / f"{stem}.json").read_text()
        name = stem
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {ref!r} is not valid JSON: {exc}") from exc
    return name, simlab.ExperimentConfig.from_dict(data)


CSV_FIELDS = ("kind", "model", "N", "n", "K", "C_o", "method", "level", "u", "R", "failures",
              "mean_total_exceedances", "bias", "sd", "rmse", "ecp", "ra", "detection_rate_mean")


def study_report(name: str, res: simlab.StudyResult, full: bool, records: bool) -> dict:
    cfg = res.config
    designs = {d.extras["N"]: d for d in res.designs}
    cells = []
    for c in res.cells:
        d = designs[c.labels["N"]]
        row = {"kind": cfg.kind, "model": cfg.model, "N": c.labels["N"], "n": d.n, "K": d.K,
               "C_o": c.labels.get("C_o")}
        row.update(c.report.summary())
        if records:
            row["per_replication"] = c.report.per_replication
        cells.append(row)
    design_rows = [{"N": d.extras["N"], "n": d.n, "K": d.K, "threshold_level": d.threshold_level,
                    "threshold_level_pct": round(100 * d.threshold_level, 1), "u": d.threshold,
                    "h": d.h_coefficient, "C_K": d.C_K, "gamma": d.extras["gamma"],
                    "delta": d.extras["delta"]} for d in res.designs]
    return {"name": name, "kind": cfg.kind, "full": full, "config": cfg.to_dict(),
            "design": design_rows, "cells": cells, "summary": res.summary,
            "generated_at": _timestamp()}


def write_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
        w.writeheader()
        for row in report["cells"]:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in CSV_FIELDS})


def cmd_simulate(args):
    if args.list:
        for name in sorted(bundled_configs()):
            print(name)
        return EXIT_OK
    if not args.config:
        raise ConfigError("simulate needs --config (a file or a bundled name; see --list)")
    name, cfg = load_config(args.config)
    if args.R is not None:
        cfg = dataclasses.replace(cfg, R=args.R)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    if args.full:
        cfg = cfg.escalated()
        print(f"warning: --full runs {name} at full scale (N={list(cfg.N_grid)}, R={cfg.R}); "
              "expect hours of runtime", file=sys.stderr)
    if args.design_only:
        designs = [simlab.derive_design(cfg, N) for N in cfg.N_grid]
        res = simlab.StudyResult(cfg, designs, [])
        report = study_report(name, res, args.full, False)
        dump_json({k: report[k] for k in ("name", "config", "design")}, None)
        return EXIT_OK
    t0 = time.time()
    res = simlab.run_study(cfg, jobs=args.jobs)
    report = study_report(name, res, args.full, args.records)
    report["elapsed_seconds"] = round(time.time() - t0, 3)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(report, out / f"{name}.json")
    write_csv(out / f"{name}.csv", report)
    for row in report["cells"]:
        print(f"{row['model']:<14} N={row['N']:<9} method={row['method']:<5} level={row['level']:.4f} "
              f"rmse={row['rmse']:.5f} ecp={row['ecp']:.3f} ra={row['ra']:.4f}"
              + (f" pi={row['detection_rate_mean']:.4f}" if row.get("detection_rate_mean") is not None else ""))
    print(f"wrote {out / (name + '.json')} and {out / (name + '.csv')}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subtail", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="averaged tail-index estimate with confidence interval")
    _add_source_args(p)
    _add_fit_args(p)
    p.add_argument("--negate", action="store_true", help="estimate the lower tail (fit -X + shift)")
    p.add_argument("--alpha", type=float, default=0.05, help="CI level complement (default 0.05)")
    p.add_argument("--out", help="report path (default stdout)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bound", help="extreme-quantile normal range")
    g = p.add_argument_group("data source")
    g.add_argument("--input")
    g.add_argument("--format", choices=("f64le", "csv"), default="f64le")
    g.add_argument("--column", default="0")
    g.add_argument("--delimiter", default=",")
    g.add_argument("--header", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--missing", default=",NA")
    _add_fit_args(p, need_sampling=False)
    p.add_argument("--estimate", help="upper-side estimate JSON written by 'subtail estimate'")
    p.add_argument("--lower-estimate", help="lower-side estimate JSON ('subtail estimate --negate')")
    p.add_argument("--params", help="known parameters: gamma=..,u=..,alpha_u=..")
    p.add_argument("--tau", type=float, default=1e-3, help="tail level per side (default 1e-3)")
    p.add_argument("--two-sided", action="store_true")
    p.add_argument("--lower-shift", type=float, default=None,
                   help="shift for the negated side (default: same as --shift)")
    p.add_argument("--out", help="range JSON path (default stdout)")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("detect", help="flag records outside a normal range")
    _add_source_args(p)
    p.add_argument("--range", required=True, help="range JSON written by 'subtail bound'")
    p.add_argument("--limit", type=int, default=DEFAULT_LIMIT, help="max stored suspects")
    p.add_argument("--out", help="suspects CSV path (default stdout)")
    p.add_argument("--summary", help="summary JSON path (default stdout, or stderr when CSV goes to stdout)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("describe", help="mean, median, min, max, kurtosis")
    _add_source_args(p)
    p.add_argument("--seed", type=int, default=0, help="seed for the approximate median subsample")
    p.add_argument("--name", help="variable name for the CSV row")
    p.add_argument("--csv", help="also write a one-row CSV table")
    p.add_argument("--out", help="report path (default stdout)")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("simulate", help="run a Monte-Carlo experiment config")
    p.add_argument("--config", help="config JSON file or bundled config name")
    p.add_argument("--list", action="store_true", help="list bundled configs")
    p.add_argument("--full", action="store_true", help="escalate to full-scale N and R")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("--R", type=int, help="override replication count")
    p.add_argument("--seed", type=int, help="override master seed")
    p.add_argument("--records", action="store_true", help="include per-replication records in JSON")
    p.add_argument("--design-only", action="store_true", help="print the derived design and exit")
    p.add_argument("--out", default="results", help="output directory (default ./results)")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SubtailError as exc:
        code = (EXIT_CONFIG if isinstance(exc, ConfigError)
                else EXIT_DATA if isinstance(exc, DataError) else EXIT_DEGENERATE)
        err = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
        sys.stderr.write(json.dumps(err) + "\n")
        return code
    except (OSError, json.JSONDecodeError) as exc:
        code = EXIT_DATA if isinstance(exc, OSError) else EXIT_CONFIG
        sys.stderr.write(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc),
                                               "exit_code": code}}) + "\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
