import csv
import json

import numpy as np
import pytest

import rrm.pipeline as pl
from rrm import __version__
from rrm.intraday import FitError
from rrm.pipeline import (
    DataError,
    NumericalFailure,
    RunConfig,
    day_seed,
    load_days,
    read_estimates,
    run_backtest,
    run_estimate,
    sidecar_path,
    write_synthetic_csv,
)
from rrm.synthetic import default_spec, gaussian_ground_truth, generate


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_estimate_is_deterministic(minute_csv, tmp_path):
    cfg = RunConfig(inputs=[str(minute_csv)], c=39, method="ensemble", mc_batch=20_000,
                    output=str(tmp_path / "a"), seed=7)
    a = run_estimate(cfg)
    b = run_estimate(RunConfig(**{**cfg.to_dict(), "output": str(tmp_path / "b")}))
    assert a.csv_path.read_bytes() == b.csv_path.read_bytes()
    par = run_estimate(RunConfig(**{**cfg.to_dict(), "output": str(tmp_path / "c"), "jobs": 2}))
    assert par.csv_path.read_bytes() == a.csv_path.read_bytes()

    rows = read_rows(a.csv_path)
    assert rows[0] == ["date", "theta", "y", "var_cf", "es_cf", "var_mc", "es_mc", "var_ens", "es_ens"]
    assert len(rows) == 1 + 4 * 3
    for r in rows[1:]:
        v = [float(x) for x in r[3:]]
        for var, es in zip(v[::2], v[1::2]):
            assert es <= var < 0

    man = json.loads(a.manifest_path.read_text())
    assert man["version"] == __version__
    assert man["seed"] == 7 and man["failures"] == []
    assert man["config_hash"] == cfg.hash()


def test_dh_and_ensemble_align(minute_csv, tmp_path):
    base = dict(inputs=[str(minute_csv)], c=78, output=str(tmp_path), mc_batch=10_000)
    dh = read_rows(run_estimate(RunConfig(method="dh", **base)).csv_path)
    ens = read_rows(run_estimate(RunConfig(method="ensemble", **base)).csv_path)
    assert [r[:3] for r in dh] != [] and [r[:2] for r in dh[1:]] == [r[:2] for r in ens[1:]]
    assert dh[0][3:] == ["var_dh", "es_dh"]


def test_config_hash_and_validation(tmp_path):
    a = RunConfig()
    assert a.hash() == RunConfig().hash()
    for change in ({"c": 39}, {"seed": 1}, {"thetas": "0.05"}, {"drift": "ema5"}, {"filter": "ma1"}):
        assert RunConfig(**change).hash() != a.hash()
    for bad in ({"method": "x"}, {"thetas": "0.7"}, {"c": 0}, {"mc_batch": 3}, {"drift": "sma"},
                {"subordinator": "ticks"}, {"hurst": 1.0}, {"es_rule": "x"}, {"forecaster": "x"}):
        with pytest.raises(ValueError):
            RunConfig(**bad)


def test_config_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nc = 39\ntheta = 0.05, 0.01\nmethod = dh\nmc-batch = 2000\n")
    cfg = RunConfig.from_file(f, seed=3, method=None)
    assert (cfg.c, cfg.thetas, cfg.method, cfg.mc_batch, cfg.seed) == (39, (0.05, 0.01), "dh", 2000, 3)
    f.write_text("nonsense = 1\n")
    with pytest.raises(ValueError):
        RunConfig.from_file(f)


def test_day_seed_is_per_date():
    import datetime as dt

    d = dt.date(2024, 1, 2)
    assert day_seed(1, d) == day_seed(1, d)
    assert day_seed(1, d) != day_seed(2, d)
    assert day_seed(1, d) != day_seed(1, d + dt.timedelta(days=1))


def test_too_many_failures(minute_csv, tmp_path, monkeypatch):
    calls = {"n": 0}
    real = pl.fit_iid_t

    def flaky(y, mu=0.0):
        calls["n"] += 1
        if calls["n"] == 2:
            raise FitError("synthetic failure")
        return real(y, mu)

    monkeypatch.setattr(pl, "fit_iid_t", flaky)
    cfg = RunConfig(inputs=[str(minute_csv)], c=39, method="cf", output=str(tmp_path))
    with pytest.raises(NumericalFailure):
        run_estimate(cfg)
    man = json.loads(next(tmp_path.glob("*.manifest.json")).read_text())
    assert len(man["failures"]) == 1 and "synthetic failure" in man["failures"][0][1]


def test_missing_input(tmp_path):
    with pytest.raises(DataError):
        run_estimate(RunConfig(inputs=[str(tmp_path / "none.csv")], output=str(tmp_path)))


def synthetic_input(tmp_path, n_days=300, with_truth=True):
    spec = default_spec("gaussian", c=39, n_days=n_days, seed=1)
    panel = generate(spec)
    path = tmp_path / "syn.csv"
    write_synthetic_csv(panel.dates, panel.returns, path)
    if with_truth:
        truth = gaussian_ground_truth(spec)
        sidecar_path(path).write_text(json.dumps({"spec": spec.to_dict(), "truth": truth.to_dict()}))
    return path, panel


def test_synthetic_input_and_backtest(tmp_path):
    path, panel = synthetic_input(tmp_path)
    days = load_days(path, RunConfig(c=39))
    assert len(days) == 300
    np.testing.assert_array_equal(days[5].returns, panel.returns[5])

    out = tmp_path / "est"
    runs = [
        run_estimate(RunConfig(inputs=[str(path)], c=39, method="dh", output=str(out))),
        run_estimate(RunConfig(inputs=[str(path)], c=39, method="cf", output=str(out))),
    ]
    est, man = read_estimates(runs[1].csv_path)
    assert man["estimator"] == "t-iid" and len(est["date"]) == 900
    tables = run_backtest(RunConfig(output=str(tmp_path / "bt"), n_boot=200), [r.csv_path for r in runs])
    assert {"hits", "as1_reject", "as2_reject", "rmse_var", "rmse_es"} <= set(tables)
    rows = read_rows(tables["hits"])
    assert rows[0] == ["method", "subordinator", "theta=0.05|c=39", "theta=0.025|c=39", "theta=0.01|c=39"]
    # two methods x one subordinator
    assert len(rows) - 1 == 2
    rm = {r[0]: [float(x) for x in r[2:]] for r in read_rows(tables["rmse_var"])[1:]}
    assert all(a < b for a, b in zip(rm["t-iid[cf]"], rm["dh"]))


def test_backtest_without_sidecar(tmp_path):
    path, _ = synthetic_input(tmp_path, n_days=260, with_truth=False)
    run = run_estimate(RunConfig(inputs=[str(path)], c=39, method="dh", output=str(tmp_path)))
    tables = run_backtest(RunConfig(output=str(tmp_path / "bt"), n_boot=100), [run.csv_path])
    assert "rmse_var" not in tables and "hits" in tables


def test_backtest_rows_are_methods_times_subordinators(minute_csv, tmp_path):
    runs = []
    for sub in ("clock", "tpv", "vol"):
        for method in ("dh", "cf"):
            cfg = RunConfig(inputs=[str(minute_csv)], subordinator=sub, c=39, method=method,
                            output=str(tmp_path / "e"))
            runs.append(run_estimate(cfg).csv_path)
    tables = run_backtest(RunConfig(output=str(tmp_path / "bt")), runs)
    assert len(read_rows(tables["hits"])) - 1 == 2 * 3


def test_ema_drift_warmup(tmp_path):
    path, _ = synthetic_input(tmp_path, n_days=260)
    run = run_estimate(RunConfig(inputs=[str(path)], c=39, method="cf", drift="ema21", output=str(tmp_path)))
    man = json.loads(run.manifest_path.read_text())
    assert man["warmup_days"] == 252 and man["n_estimated"] == 8
    assert man["estimator"] == "t-iid(21)"
