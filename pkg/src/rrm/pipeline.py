"""Batch orchestration: per-day estimation, persistence and backtest tables.

Every day is processed independently with a seed derived from
``(base_seed, date)``, so outputs do not depend on worker count or order.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .dh import DhConfig, dh_risk_pair
from .evaluation import (
    ForecasterSpec,
    RealizedPanel,
    as_tests_by_year,
    hits_frequency,
    mean_losses,
    rmse_vs_truth,
    rolling_forecast_eval,
)
from .intraday import DriftKind, DriftSpec, FitError, ema_drift, fit_iid_t, fit_ma1_t
from .market_data import ParseError, _open_text, parse_minute_csv, read_panel_csv
from .quadrature import QuadratureError
from .scaling import (
    McConfig,
    RiskSpec,
    RootSearchError,
    cf_risk_pairs,
    ensemble_risk_pair,
    mc_risk_pairs,
)
from .subordinator import SubordinationSpec, SubordinatorKind, subordinate
from .synthetic import GroundTruth

logger = logging.getLogger(__name__)

MAX_FAIL_FRACTION = 0.05
METHODS = ("cf", "mc", "ensemble", "dh")
FILTERS = ("iid", "ma1")
DAY_ERRORS = (FitError, RootSearchError, QuadratureError, ValueError, RuntimeError, FloatingPointError)


class DataError(RuntimeError):
    """Unreadable or inconsistent input (exit code 2)."""


class NumericalFailure(RuntimeError):
    """Too many days failed to estimate (exit code 3)."""


def _as_tuple(value, cast):
    if isinstance(value, str):
        value = [v for v in value.replace(";", ",").split(",") if v.strip()]
    return tuple(cast(v.strip()) if isinstance(v, str) else cast(v) for v in value)


@dataclass(frozen=True)
class RunConfig:
    inputs: tuple = ()
    subordinator: str = "tpv"
    c: int = 78
    drift: str = "zero"
    filter: str = "iid"
    thetas: tuple = (0.05, 0.025, 0.01)
    method: str = "ensemble"
    mc_batch: int = 100_000
    hurst: float = 0.5
    es_rule: str = "integral"
    forecaster: str = "ar1"
    alpha: float = 0.9
    train_years: int = 5
    test_years: int = 1
    n_boot: int = 10_000
    output: str = "out"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("inputs", _as_tuple(self.inputs, str))
        set_("thetas", _as_tuple(self.thetas, float))
        set_("subordinator", SubordinatorKind(str(self.subordinator).lower()).value)
        for name in ("c", "mc_batch", "n_boot", "seed", "jobs", "train_years", "test_years"):
            set_(name, int(getattr(self, name)))
        for name in ("hurst", "alpha"):
            set_(name, float(getattr(self, name)))
        if not self.thetas or not all(0 < t < 0.5 for t in self.thetas):
            raise ValueError("thetas must be a non-empty list of values in (0, 0.5)")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.filter not in FILTERS:
            raise ValueError(f"filter must be one of {FILTERS}")
        DriftSpec.parse(self.drift)
        SubordinationSpec(self.subordinator, self.c)
        McConfig(self.mc_batch)
        DhConfig(self.hurst)
        RiskSpec(self.thetas[0], es_rule=self.es_rule)
        ForecasterSpec(self.forecaster, self.alpha, self.train_years, self.test_years)
        if self.jobs < 1:
            raise ValueError("jobs must be positive")

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        """Flat ``key = value`` file; lists are comma separated."""
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        text = Path(path).read_text()
        parser.read_string("[run]\n" + text)
        known = {f.name for f in dataclasses.fields(cls)}
        values = {}
        for key, value in parser["run"].items():
            key = key.replace("-", "_")
            if key == "theta":
                key = "thetas"
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["inputs"] = list(self.inputs)
        d["thetas"] = list(self.thetas)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def estimator_label(self) -> str:
        if self.method == "dh":
            return "dh"
        drift = DriftSpec.parse(self.drift)
        base = "t-ma" if self.filter == "ma1" else "t-iid"
        return base if drift.kind is DriftKind.ZERO else f"{base}({drift.beta})"


# ---------------------------------------------------------------------------
# inputs


@dataclass
class DayInput:
    date: dt.date
    returns: np.ndarray  # the c subordinated returns
    y: float  # open-to-close return
    fallback: bool = False


SYNTHETIC_COLUMNS = ("date", "j", "ret")


def _header(path) -> list[str]:
    with _open_text(path) as fh:
        line = fh.readline()
    return [h.strip().lower() for h in line.strip().split(",")]


def read_synthetic_csv(path) -> list[tuple[dt.date, np.ndarray]]:
    rows: dict[dt.date, list] = {}
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader)]
        if tuple(header[:3]) != SYNTHETIC_COLUMNS:
            raise ParseError(f"expected columns {SYNTHETIC_COLUMNS}", 1)
        for row in reader:
            if not row:
                continue
            try:
                rows.setdefault(dt.date.fromisoformat(row[0]), []).append((int(row[1]), float(row[2])))
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), reader.line_num) from None
    out = []
    for date in sorted(rows):
        recs = sorted(rows[date])
        out.append((date, np.array([r[1] for r in recs])))
    return out


def write_synthetic_csv(dates, returns: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SYNTHETIC_COLUMNS)
        for date, row in zip(dates, returns):
            iso = date.isoformat()
            for j, r in enumerate(row, start=1):
                w.writerow((iso, j, repr(float(r))))


def sidecar_path(path) -> Path:
    p = Path(path)
    name = p.name
    for suffix in (".gz", ".csv"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return p.with_name(name + ".truth.json")


def load_days(path, config: RunConfig) -> list[DayInput]:
    """Subordinated returns per day from minute bars, a panel export or a synthetic panel."""
    try:
        header = _header(path)
        if tuple(header[:3]) == SYNTHETIC_COLUMNS:
            return [DayInput(d, r, float(math.fsum(r))) for d, r in read_synthetic_csv(path)]
        if tuple(header[:4]) == ("date", "minute", "log_price", "volume"):
            panel = read_panel_csv(path)
        else:
            panel = parse_minute_csv(path, asset_id=Path(path).stem)
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    spec = SubordinationSpec(config.subordinator, config.c)
    days = []
    for day in panel:
        sub = subordinate(day, spec)
        if sub.fallback:
            logger.warning("%s: zero intensity, clock grid used", day.date)
        days.append(DayInput(day.date, sub.returns, sub.daily_return, sub.fallback))
    return days


# ---------------------------------------------------------------------------
# estimation


def day_seed(base_seed: int, date: dt.date) -> int:
    return int(np.random.SeedSequence([int(base_seed), date.toordinal()]).generate_state(1, np.uint64)[0])


def estimate_day(returns: np.ndarray, mu_fixed: float, config: RunConfig, seed: int) -> dict:
    """All requested risk columns for one day, keyed by theta."""
    specs = [RiskSpec(t, es_rule=config.es_rule) for t in config.thetas]
    out = {t: {} for t in config.thetas}
    if config.method == "dh":
        cfg = DhConfig(config.hurst)
        for s in specs:
            p = dh_risk_pair(returns, s, cfg)
            out[s.theta].update(var_dh=p.var, es_dh=p.es)
        return out
    fit = fit_ma1_t if config.filter == "ma1" else fit_iid_t
    model = fit(returns, mu_fixed)
    cf = mc = None
    if config.method in ("cf", "ensemble"):
        cf = cf_risk_pairs(model, specs)
    if config.method in ("mc", "ensemble"):
        mc = mc_risk_pairs(model, specs, McConfig(config.mc_batch, seed))
    for i, s in enumerate(specs):
        cols = out[s.theta]
        if cf:
            cols.update(var_cf=cf[i].var, es_cf=cf[i].es)
        if mc:
            cols.update(var_mc=mc[i].var, es_mc=mc[i].es)
        if cf and mc:
            ens = ensemble_risk_pair(cf[i], mc[i])
            cols.update(var_ens=ens.var, es_ens=ens.es)
    return out


def _work(args):
    date, returns, mu_fixed, config = args
    try:
        return date, estimate_day(returns, mu_fixed, config, day_seed(config.seed, date)), None
    except DAY_ERRORS as exc:
        return date, None, f"{type(exc).__name__}: {exc}"


def risk_columns(method: str) -> list[str]:
    return {
        "dh": ["var_dh", "es_dh"],
        "cf": ["var_cf", "es_cf"],
        "mc": ["var_mc", "es_mc"],
        "ensemble": ["var_cf", "es_cf", "var_mc", "es_mc", "var_ens", "es_ens"],
    }[method]


@dataclass
class EstimateResult:
    csv_path: Path
    manifest_path: Path
    rows: list = field(repr=False)
    failures: list


def run_estimate(config: RunConfig, days: Sequence[DayInput] | None = None, stem: str | None = None) -> EstimateResult:
    """Estimate every day of the (single) input and persist CSV + manifest."""
    if days is None:
        if len(config.inputs) != 1:
            raise DataError("estimate needs exactly one input file")
        days = load_days(config.inputs[0], config)
        stem = stem or Path(config.inputs[0]).name.split(".")[0]
    if not days:
        raise DataError("no usable days in input")
    stem = stem or "panel"

    drift = DriftSpec.parse(config.drift)
    y = np.array([d.y for d in days])
    if config.method != "dh" and drift.kind is DriftKind.EMA:
        mu = ema_drift(y, drift.beta) / config.c
    else:
        mu = np.zeros(len(days))

    tasks = [(d.date, d.returns, float(mu[i]), config) for i, d in enumerate(days) if np.isfinite(mu[i])]
    warmup = len(days) - len(tasks)
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_work, tasks, chunksize=max(1, len(tasks) // (4 * config.jobs))))
    else:
        results = [_work(t) for t in tasks]

    failures = [(d.isoformat(), err) for d, cols, err in results if err]
    for date, err in failures:
        logger.warning("%s: %s", date, err)

    y_by_date = {d.date: d.y for d in days}
    cols = risk_columns(config.method)
    rows = []
    for date, est, err in sorted(results, key=lambda r: r[0]):
        if err:
            continue
        for t in config.thetas:
            rows.append([date.isoformat(), t, y_by_date[date]] + [est[t][k] for k in cols])

    out_dir = Path(config.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.{config.estimator_label}.{config.method}.{config.subordinator}{config.c}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "theta", "y"] + cols)
        for r in rows:
            w.writerow([r[0], repr(r[1])] + [repr(float(v)) for v in r[2:]])

    manifest = {
        "version": __version__,
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "seed": config.seed,
        "estimator": config.estimator_label,
        "n_days": len(days),
        "n_estimated": len(tasks) - len(failures),
        "warmup_days": warmup,
        "failures": failures,
        "output": csv_path.name,
    }
    manifest_path = csv_path.with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    if tasks and len(failures) > MAX_FAIL_FRACTION * len(tasks):
        raise NumericalFailure(f"{len(failures)} of {len(tasks)} days failed")
    return EstimateResult(csv_path, manifest_path, rows, failures)


# ---------------------------------------------------------------------------
# backtest


def read_estimates(path) -> tuple[dict, dict]:
    """Estimate CSV and its manifest as ``({column: array}, manifest)``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing panel {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [row for row in reader]
    cols = {h: [r[i] for r in data] for i, h in enumerate(header)}
    out = {"date": [dt.date.fromisoformat(d) for d in cols["date"]]}
    for h in header[1:]:
        out[h] = np.array(cols[h], dtype=float)
    mpath = path.with_suffix(".manifest.json")
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
    return out, manifest


def _method_pairs(columns) -> list[tuple[str, str, str]]:
    pairs = []
    for tag in ("cf", "mc", "ens", "dh"):
        if f"var_{tag}" in columns:
            pairs.append((tag, f"var_{tag}", f"es_{tag}"))
    return pairs


def _truth_for(manifest: dict) -> GroundTruth | None:
    for inp in manifest.get("config", {}).get("inputs", []):
        side = sidecar_path(inp)
        if side.exists():
            return GroundTruth.from_dict(json.loads(side.read_text())["truth"])
    return None


def backtest_rows(path, config: RunConfig) -> list[dict]:
    """One record per (method column, theta) of one estimate CSV."""
    est, manifest = read_estimates(path)
    run_cfg = manifest.get("config", {})
    label = manifest.get("estimator", "?")
    sub = run_cfg.get("subordinator", "?")
    c = run_cfg.get("c", "?")
    truth = _truth_for(manifest)
    fspec = ForecasterSpec(config.forecaster, config.alpha, config.train_years, config.test_years)
    dates = np.array(est["date"], dtype=object)
    records = []
    for tag, vcol, ecol in _method_pairs(est):
        method = label if tag == "dh" else f"{label}[{tag}]"
        for t in sorted(set(est["theta"].tolist()), reverse=True):
            m = est["theta"] == t
            panel = RealizedPanel(list(dates[m]), est["y"][m], est[vcol][m], est[ecol][m], t)
            rec = {"method": method, "subordinator": sub, "c": c, "theta": t,
                   "hits": hits_frequency(panel)}
            if len(panel) >= 252 and np.all(panel.e_hat < 0):
                asr = as_tests_by_year(panel, n_boot=config.n_boot, seed=config.seed)
                rec.update(as1_reject=asr["as1_reject"], as2_reject=asr["as2_reject"])
            if len(panel) >= (fspec.train_years + fspec.test_years) * fspec.days_per_year:
                pin, joint = mean_losses(rolling_forecast_eval(panel, fspec))
                rec.update(pinball=pin, joint=joint)
            if truth is not None and t in truth.var_true:
                rec.update(
                    rmse_var=rmse_vs_truth(panel.q_hat, np.full(len(panel), truth.var_true[t])),
                    rmse_es=rmse_vs_truth(panel.e_hat, np.full(len(panel), truth.es_true[t])),
                )
            records.append(rec)
    return records


TABLE_METRICS = ("hits", "as1_reject", "as2_reject", "pinball", "joint", "rmse_var", "rmse_es")


def run_backtest(config: RunConfig, panels: Sequence) -> dict[str, Path]:
    """Table-shaped CSVs: rows = method x subordinator, columns = theta x c."""
    records = []
    for p in panels:
        records.extend(backtest_rows(p, config))
    if not records:
        raise DataError("no estimates to backtest")
    out_dir = Path(config.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    row_keys = list(dict.fromkeys((r["method"], r["subordinator"]) for r in records))
    col_keys = sorted({(r["theta"], r["c"]) for r in records}, key=lambda k: (-k[0], str(k[1])))
    written = {}
    for metric in TABLE_METRICS:
        if not any(metric in r for r in records):
            continue
        cell = {(r["method"], r["subordinator"], r["theta"], r["c"]): r.get(metric) for r in records}
        path = out_dir / f"backtest_{metric}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "subordinator"] + [f"theta={t}|c={c}" for t, c in col_keys])
            for m, s in row_keys:
                vals = [cell.get((m, s, t, c)) for t, c in col_keys]
                w.writerow([m, s] + ["" if v is None else repr(float(v)) for v in vals])
        written[metric] = path
    return written
