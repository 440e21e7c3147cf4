import datetime as dt
import gzip
import logging

import numpy as np
import pytest

from rrm.market_data import (
    DayPanel,
    IntradayDay,
    MinuteBar,
    ParseError,
    SessionSpec,
    daily_return,
    parse_minute_csv,
    read_panel_csv,
    write_panel_csv,
)

D0 = dt.date(2024, 3, 1)


def minute_rows(date, prices, volumes=None, skip=()):
    """CSV text for one session of minute prices starting at 09:30."""
    start = dt.datetime.combine(date, dt.time(9, 30))
    out = []
    for k, p in enumerate(prices):
        if k in skip:
            continue
        v = 1.0 if volumes is None else volumes[k]
        out.append(f"{(start + dt.timedelta(minutes=k)).isoformat()},{p},{v}")
    return out


def write_csv(tmp_path, lines, name="bars.csv"):
    path = tmp_path / name
    path.write_text("timestamp,price,volume\n" + "\n".join(lines) + "\n")
    return path


def test_constant_day(tmp_path):
    path = write_csv(tmp_path, minute_rows(D0, [100.0] * 391, [2.0] * 391))
    panel = parse_minute_csv(path)
    (day,) = panel.days
    assert day.log_prices.size == 391
    np.testing.assert_array_equal(day.log_prices, np.log(100.0))
    np.testing.assert_array_equal(day.volumes, 2.0)
    assert daily_return(day) == 0.0


def test_gap_is_forward_filled(tmp_path):
    prices = [100.0] * 391
    noon = 150  # 12:00
    prices[noon - 1] = 101.0
    path = write_csv(tmp_path, minute_rows(D0, prices, skip={noon}))
    day = parse_minute_csv(path).days[0]
    assert day.log_prices[noon] == pytest.approx(np.log(101.0))
    assert day.volumes[noon - 1] == 0.0


def test_empty_day_is_skipped(tmp_path, caplog):
    d1, d2, d3 = D0, D0 + dt.timedelta(days=3), D0 + dt.timedelta(days=4)
    lines = minute_rows(d1, [100.0] * 391) + minute_rows(d3, [50.0] * 391)
    # d2 only has rows outside the session
    lines.append(f"{dt.datetime.combine(d2, dt.time(8, 0)).isoformat()},99,1")
    with caplog.at_level(logging.WARNING):
        panel = parse_minute_csv(write_csv(tmp_path, lines))
    assert panel.dates == [d1, d3]
    assert "skipped" in caplog.text


def test_daily_return_examples():
    lp = np.full(391, np.log(100.0))
    lp[-1] = np.log(101.0)
    day = IntradayDay(D0, lp, np.zeros(390))
    assert daily_return(day) == pytest.approx(np.log(1.01), abs=1e-15)
    day = IntradayDay(D0, 0.001 * np.arange(391), np.zeros(390))
    assert daily_return(day) == pytest.approx(0.39)


def test_gzip_and_offset_timestamps(tmp_path):
    lines = [l.replace(",", "-05:00,", 1) for l in minute_rows(D0, np.linspace(100, 101, 391))]
    path = tmp_path / "bars.csv.gz"
    with gzip.open(path, "wt") as fh:
        fh.write("timestamp,price,volume\n" + "\n".join(lines) + "\n")
    day = parse_minute_csv(path).days[0]
    assert day.log_prices[-1] == pytest.approx(np.log(101.0))


@pytest.mark.parametrize(
    "bad, line",
    [("2024-03-01T09:31:00,-1,5", 3), ("2024-03-01T09:31:00,abc,5", 3), ("not-a-time,1,1", 3)],
)
def test_malformed_rows_report_line(tmp_path, bad, line):
    lines = minute_rows(D0, [100.0])[:1] + [bad]
    with pytest.raises(ParseError) as err:
        parse_minute_csv(write_csv(tmp_path, lines))
    assert err.value.line == line


def test_missing_column(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("timestamp,close\n2024-03-01T09:30:00,1\n")
    with pytest.raises(ParseError):
        parse_minute_csv(path)


def test_invariants():
    with pytest.raises(ValueError):
        MinuteBar(dt.datetime(2024, 1, 1, 10), 0.0, 1.0)
    with pytest.raises(ValueError):
        MinuteBar(dt.datetime(2024, 1, 1, 10), 1.0, -1.0)
    with pytest.raises(ValueError):
        IntradayDay(D0, np.zeros(391), np.zeros(389))
    day = IntradayDay(D0, np.zeros(391), np.zeros(390))
    with pytest.raises(ValueError):
        DayPanel("x", (day, day))
    assert SessionSpec().n_minutes == 390
    assert SessionSpec().slot(dt.time(16, 1)) is None


def test_panel_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    days = tuple(
        IntradayDay(D0 + dt.timedelta(days=i), np.cumsum(rng.normal(0, 1e-3, 391)), rng.random(390))
        for i in range(3)
    )
    panel = DayPanel("abc", days)
    for name in ("p.csv", "p.csv.gz"):
        write_panel_csv(panel, tmp_path / name)
        back = read_panel_csv(tmp_path / name, asset_id="abc")
        for a, b in zip(panel.days, back.days):
            assert a.date == b.date
            np.testing.assert_array_equal(a.log_prices, b.log_prices)
            np.testing.assert_array_equal(a.volumes, b.volumes)
