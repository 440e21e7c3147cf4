"""Minute-bar ingestion: parse, grid and forward-fill one regular session per day.

Input is a delimited table with a header row and the columns
``timestamp, price, volume``.  Timestamps are ISO-8601 and read as
exchange-local wall-clock time.  Rows outside the session are dropped, each
remaining day is placed on a one-minute grid and gaps are forward-filled
with the previous available price.
"""

from __future__ import annotations

import csv
import datetime as dt
import gzip
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)

MIN_COVERAGE = 0.5


class ParseError(ValueError):
    """A malformed input row; ``line`` is the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class SessionSpec:
    open: dt.time = dt.time(9, 30)
    close: dt.time = dt.time(16, 0)

    @property
    def n_minutes(self) -> int:
        start = self.open.hour * 60 + self.open.minute
        end = self.close.hour * 60 + self.close.minute
        if end <= start:
            raise ValueError("session close must be after open")
        return end - start

    def slot(self, t: dt.time) -> int | None:
        """Minute index of ``t`` inside the session, or None when outside.

        Sub-minute stamps are floored onto the minute grid.
        """
        k = t.hour * 60 + t.minute - (self.open.hour * 60 + self.open.minute)
        if 0 <= k <= self.n_minutes:
            return k
        return None


REGULAR_SESSION = SessionSpec()


@dataclass(frozen=True)
class MinuteBar:
    timestamp: dt.datetime
    price: float
    volume: float

    def __post_init__(self):
        if not (self.price > 0 and math.isfinite(self.price)):
            raise ValueError(f"price must be positive and finite, got {self.price}")
        if not (self.volume >= 0 and math.isfinite(self.volume)):
            raise ValueError(f"volume must be non-negative, got {self.volume}")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class IntradayDay:
    """One trading day: ``n+1`` log prices and ``n`` per-minute volumes.

    ``volumes[i-1]`` is the volume traded over the interval ending at
    minute ``i``.  For the regular session ``n = 390``.
    """

    date: dt.date
    log_prices: np.ndarray
    volumes: np.ndarray

    def __post_init__(self):
        lp = _frozen(self.log_prices)
        vol = _frozen(self.volumes)
        object.__setattr__(self, "log_prices", lp)
        object.__setattr__(self, "volumes", vol)
        if lp.ndim != 1 or lp.size < 2:
            raise ValueError("log_prices must be a 1-D sequence of length >= 2")
        if vol.shape != (lp.size - 1,):
            raise ValueError(
                f"expected {lp.size - 1} volumes for {lp.size} prices, got {vol.size}"
            )
        if not np.all(np.isfinite(lp)):
            raise ValueError(f"{self.date}: non-finite log price")
        if not np.all(np.isfinite(vol)) or np.any(vol < 0):
            raise ValueError(f"{self.date}: volumes must be finite and non-negative")

    @property
    def n_minutes(self) -> int:
        return self.log_prices.size - 1


@dataclass(frozen=True)
class DayPanel:
    asset_id: str
    days: tuple[IntradayDay, ...] = field(default_factory=tuple)

    def __post_init__(self):
        days = tuple(self.days)
        object.__setattr__(self, "days", days)
        for prev, nxt in zip(days, days[1:]):
            if not prev.date < nxt.date:
                raise ValueError(
                    f"dates must be strictly increasing: {prev.date} then {nxt.date}"
                )

    def __len__(self) -> int:
        return len(self.days)

    def __iter__(self):
        return iter(self.days)

    @property
    def dates(self) -> list[dt.date]:
        return [d.date for d in self.days]

    def daily_returns(self) -> np.ndarray:
        return np.array([daily_return(d) for d in self.days])


def daily_return(day: IntradayDay) -> float:
    """Open-to-close log return ``S_n - S_0``."""
    return float(day.log_prices[-1] - day.log_prices[0])


def _open_text(source) -> io.StringIO:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return io.StringIO(data.decode("utf-8"))


def _parse_timestamp(text: str) -> dt.datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    ts = dt.datetime.fromisoformat(text)
    # exchange-local: any offset is dropped rather than converted
    return ts.replace(tzinfo=None)


def _read_rows(handle, header_cols: tuple[str, ...]) -> Iterable[tuple[int, list[str]]]:
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        return
    names = [h.strip().lower() for h in header]
    try:
        idx = [names.index(c) for c in header_cols]
    except ValueError:
        raise ParseError(f"header must contain columns {header_cols}, got {header}", 1)
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) < len(names):
            raise ParseError(f"expected {len(names)} fields, got {len(row)}", line)
        yield line, [row[i] for i in idx]


def grid_day(
    date: dt.date,
    slots: dict[int, tuple[float, float]],
    n_minutes: int,
) -> IntradayDay:
    """Place observed ``{minute: (price, volume)}`` on the full session grid."""
    prices = np.full(n_minutes + 1, np.nan)
    volumes = np.zeros(n_minutes)
    for k, (price, vol) in slots.items():
        prices[k] = price
        if k >= 1:
            volumes[k - 1] = vol
    observed = np.flatnonzero(~np.isnan(prices))
    # leading gap: backfill from the first observed price
    prices[: observed[0]] = prices[observed[0]]
    idx = np.where(np.isnan(prices), 0, np.arange(prices.size))
    np.maximum.accumulate(idx, out=idx)
    prices = prices[idx]
    return IntradayDay(date=date, log_prices=np.log(prices), volumes=volumes)


def parse_minute_csv(
    source,
    session: SessionSpec = REGULAR_SESSION,
    asset_id: str = "",
    min_coverage: float = MIN_COVERAGE,
) -> DayPanel:
    """Parse a minute-bar CSV (optionally gzip-compressed) into a DayPanel.

    Days with fewer than ``min_coverage`` of the session's minutes observed
    are skipped with a warning, as are days without any observation.
    """
    n = session.n_minutes
    by_day: dict[dt.date, dict[int, tuple[float, float]]] = {}
    with _open_text(source) as handle:
        for line, (ts_text, price_text, vol_text) in _read_rows(
            handle, ("timestamp", "price", "volume")
        ):
            try:
                ts = _parse_timestamp(ts_text)
                price = float(price_text)
                vol = float(vol_text) if vol_text.strip() else 0.0
                MinuteBar(ts, price, vol)
            except ValueError as exc:
                raise ParseError(str(exc), line) from None
            slots = by_day.setdefault(ts.date(), {})
            k = session.slot(ts.time())
            if k is not None:
                slots[k] = (price, vol)

    days = []
    for date in sorted(by_day):
        slots = by_day[date]
        if not slots:
            logger.warning("%s: no observed prices, day skipped", date)
            continue
        if len(slots) < min_coverage * n:
            logger.warning(
                "%s: only %d of %d minutes observed, day skipped", date, len(slots), n
            )
            continue
        days.append(grid_day(date, slots, n))
    return DayPanel(asset_id=asset_id, days=tuple(days))


PANEL_COLUMNS = ("date", "minute", "log_price", "volume")


def write_panel_csv(panel: DayPanel, path) -> None:
    """Export a panel as a long table ``(date, minute, log_price, volume)``.

    Floats are written with ``repr`` so that :func:`read_panel_csv` recovers
    them bit-for-bit.  Minute 0 carries volume 0.
    """
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PANEL_COLUMNS)
        for day in panel.days:
            iso = day.date.isoformat()
            vols = np.concatenate([[0.0], day.volumes])
            for k, (lp, v) in enumerate(zip(day.log_prices, vols)):
                w.writerow((iso, k, repr(float(lp)), repr(float(v))))


def read_panel_csv(path, asset_id: str = "") -> DayPanel:
    """Inverse of :func:`write_panel_csv`."""
    rows: dict[dt.date, list[tuple[int, float, float]]] = {}
    with _open_text(path) as handle:
        for line, (d, k, lp, v) in _read_rows(handle, PANEL_COLUMNS):
            try:
                rows.setdefault(dt.date.fromisoformat(d.strip()), []).append(
                    (int(k), float(lp), float(v))
                )
            except ValueError as exc:
                raise ParseError(str(exc), line) from None
    days = []
    for date in sorted(rows):
        recs = sorted(rows[date])
        minutes = [r[0] for r in recs]
        if minutes != list(range(len(recs))):
            raise ParseError(f"{date}: minutes must run 0..n without gaps")
        lp = np.array([r[1] for r in recs])
        vol = np.array([r[2] for r in recs[1:]])
        days.append(IntradayDay(date, lp, vol))
    return DayPanel(asset_id=asset_id, days=tuple(days))
