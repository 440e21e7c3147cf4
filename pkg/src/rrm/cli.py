"""Command line entry point: ``rrm estimate|backtest|synthetic|diagnose``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure on too many days.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import ljung_box, structure_function
from .market_data import ParseError, parse_minute_csv, read_panel_csv
from .pipeline import (
    DataError,
    NumericalFailure,
    RunConfig,
    run_backtest,
    run_estimate,
    sidecar_path,
    write_synthetic_csv,
)
from .subordinator import SubordinationSpec, subordinate
from .synthetic import THETAS, default_spec, generate, ground_truth

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--output", "-o", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rrm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rrm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", help="daily realized VaR/ES per input day")
    _common(est)
    est.add_argument("--input", "-i", action="append", dest="inputs",
                     help="minute-bar CSV, panel export or synthetic panel")
    est.add_argument("--subordinator", choices=["clock", "tpv", "vol"])
    est.add_argument("-c", "--c", type=int, dest="c", help="subordinated returns per day")
    est.add_argument("--method", choices=["cf", "mc", "ensemble", "dh"])
    est.add_argument("--theta", help="comma-separated tail levels")
    est.add_argument("--mc-batch", type=int)
    est.add_argument("--drift", help="zero, ema5, ema21, ...")
    est.add_argument("--filter", choices=["iid", "ma1"])
    est.add_argument("--hurst", type=float)
    est.add_argument("--es-rule", choices=["integral", "riemann"])

    bt = sub.add_parser("backtest", help="tables of hits, AS tests and losses")
    _common(bt)
    bt.add_argument("panels", nargs="+", help="estimate CSVs written by 'rrm estimate'")
    bt.add_argument("--forecaster", choices=["ar1", "ema", "rw"])
    bt.add_argument("--alpha", type=float)
    bt.add_argument("--n-boot", type=int)

    syn = sub.add_parser("synthetic", help="write a simulated panel and its ground truth")
    syn.add_argument("--family", choices=["gaussian", "t"], default="gaussian")
    syn.add_argument("--dependence", choices=["iid", "ma1"], default="ma1")
    syn.add_argument("-c", "--c", type=int, default=39)
    syn.add_argument("--nu", type=float)
    syn.add_argument("--phi", type=float, default=-0.05)
    syn.add_argument("--mu", type=float, help="drift per subordinated return")
    syn.add_argument("--days", type=int, default=2520)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--theta", default=",".join(map(str, THETAS)))
    syn.add_argument("--oracle-n", type=int, default=10_000_000)
    syn.add_argument("--output", "-o", required=True, help="panel CSV path")
    syn.add_argument("-v", "--verbose", action="store_true")

    dg = sub.add_parser("diagnose", help="structure function and Ljung-Box per day")
    dg.add_argument("input", help="minute-bar CSV or panel export")
    dg.add_argument("--subordinator", choices=["clock", "tpv", "vol"], default="clock")
    dg.add_argument("-c", "--c", type=int, default=390)
    dg.add_argument("--lags", type=int, default=5)
    dg.add_argument("--pooled", action="store_true", help="average moments before regressing")
    dg.add_argument("--output", "-o", default="diagnostics")
    dg.add_argument("-v", "--verbose", action="store_true")
    return parser


OVERRIDES = {
    "estimate": ("inputs", "subordinator", "c", "method", "theta", "mc_batch", "drift",
                 "filter", "hurst", "es_rule"),
    "backtest": ("forecaster", "alpha", "n_boot"),
}


def make_config(args) -> RunConfig:
    values = {k: getattr(args, k, None) for k in ("seed", "jobs", "output")}
    for k in OVERRIDES[args.command]:
        values["thetas" if k == "theta" else k] = getattr(args, k, None)
    if args.config:
        return RunConfig.from_file(args.config, **values)
    return RunConfig(**{k: v for k, v in values.items() if v is not None})


def cmd_estimate(args) -> int:
    res = run_estimate(make_config(args))
    print(res.csv_path)
    return EXIT_OK


def cmd_backtest(args) -> int:
    for name, path in run_backtest(make_config(args), args.panels).items():
        print(f"{name}\t{path}")
    return EXIT_OK


def cmd_synthetic(args) -> int:
    kw = {"dependence": args.dependence, "phi": args.phi, "n_days": args.days, "seed": args.seed}
    if args.mu is not None:
        kw["mu"] = args.mu
    spec = default_spec(args.family, c=args.c, nu=args.nu, **kw)
    thetas = [float(t) for t in args.theta.split(",")]
    panel = generate(spec)
    truth = ground_truth(spec, thetas, oracle_n=args.oracle_n)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_synthetic_csv(panel.dates, panel.returns, out)
    side = sidecar_path(out)
    side.write_text(json.dumps({"spec": spec.to_dict(), "truth": truth.to_dict()}, indent=2) + "\n")
    print(out)
    return EXIT_OK


def _load_panel(path):
    header = Path(path).open("rb").readline().decode("utf-8", "replace").lower()
    if header.startswith("date,minute,log_price"):
        return read_panel_csv(path)
    return parse_minute_csv(path, asset_id=Path(path).stem)


def cmd_diagnose(args) -> int:
    try:
        panel = _load_panel(args.input)
    except OSError as exc:
        raise DataError(str(exc)) from exc
    spec = SubordinationSpec(args.subordinator, args.c)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rep = structure_function(panel, spec, delta_grid=np.arange(1, min(39, args.c)), pooled=args.pooled)
    with open(out / "structure_function.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q", "H", "log_A", "r2"])
        for row in zip(rep.q_grid, rep.Hq, rep.Aq_log, rep.r2):
            w.writerow([repr(float(v)) for v in row])
    with open(out / "ljung_box.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "statistic", "p_value"])
        for day in panel:
            r = subordinate(day, spec).returns
            try:
                lb = ljung_box(r, args.lags)
                w.writerow([day.date.isoformat(), repr(lb.statistic), repr(lb.p_value)])
            except ValueError:
                w.writerow([day.date.isoformat(), "", ""])
    print(out)
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "backtest": cmd_backtest,
    "synthetic": cmd_synthetic,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"rrm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ParseError, DataError, FileNotFoundError) as exc:
        print(f"rrm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"rrm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError) as exc:
        print(f"rrm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
