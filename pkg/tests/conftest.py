import datetime as dt
import sys

import numpy as np
import pytest


def write_minute_csv(path, n_days=4, seed=0, start=dt.date(2024, 1, 2)):
    """Synthetic minute bars: random-walk prices and exponential volumes."""
    rng = np.random.default_rng(seed)
    lines = ["timestamp,price,volume"]
    day = start
    for _ in range(n_days):
        while day.weekday() >= 5:
            day += dt.timedelta(days=1)
        lp = np.log(100.0) + np.cumsum(np.concatenate([[0.0], rng.standard_t(4, 390) * 5e-4]))
        t0 = dt.datetime.combine(day, dt.time(9, 30))
        vols = rng.exponential(1000.0, 391)
        for k in range(391):
            lines.append(f"{(t0 + dt.timedelta(minutes=k)).isoformat()},{np.exp(lp[k]):.6f},{vols[k]:.0f}")
        day += dt.timedelta(days=1)
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def minute_csv(tmp_path):
    return write_minute_csv(tmp_path / "bars.csv")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
