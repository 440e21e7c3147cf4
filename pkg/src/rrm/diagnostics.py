"""Self-similarity diagnostics: structure functions, Ljung-Box, drift-scaling bias."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .market_data import DayPanel
from .subordinator import SubordinationSpec, subordinate

DEFAULT_Q = np.linspace(0.25, 10.0, 40)
DEFAULT_DELTA = np.arange(1, 39)


@dataclass
class StructureFunctionReport:
    """Per-q scaling exponents ``H(q)`` and intercepts ``log A(q)``.

    ``mode`` is ``"daily"`` (per-day regressions, curves averaged) or
    ``"pooled"`` (moments averaged across days, one regression).
    """

    q_grid: np.ndarray
    delta_grid: np.ndarray
    Hq: np.ndarray
    Aq_log: np.ndarray
    r2: np.ndarray
    days_averaged: int
    mode: str = "daily"


def _ols(x: np.ndarray, Y: np.ndarray):
    """Column-wise OLS of every column of Y on x: slopes, intercepts, r^2."""
    xm = x.mean()
    dx = x - xm
    Ym = Y.mean(axis=0)
    dY = Y - Ym
    slope = dx @ dY / (dx @ dx)
    icpt = Ym - slope * xm
    resid = dY - np.outer(dx, slope)
    sst = np.einsum("ij,ij->j", dY, dY)
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(sst > 0, 1.0 - np.einsum("ij,ij->j", resid, resid) / sst, 1.0)
    return slope, icpt, np.clip(r2, 0.0, 1.0)


def structure_moments(s: np.ndarray, q_grid, delta_grid) -> np.ndarray:
    """``m(q, delta)`` from overlapping increments of the path ``s``.

    Rows follow ``delta_grid``; deltas too long for the path are NaN.
    """
    q_grid = np.asarray(q_grid, dtype=float)
    out = np.full((len(delta_grid), q_grid.size), np.nan)
    for i, d in enumerate(delta_grid):
        if d >= s.size:
            continue
        inc = np.abs(s[d:] - s[:-d])
        with np.errstate(divide="ignore"):
            out[i] = np.mean(inc[:, None] ** q_grid[None, :], axis=0)
    return out


def _paths(panel, spec):
    for day in panel:
        if isinstance(day, np.ndarray):
            yield day
        else:
            sub = subordinate(day, spec)
            yield day.log_prices[sub.tau]


def structure_function(
    panel: DayPanel,
    spec: SubordinationSpec = SubordinationSpec(kind="clock", c=390),
    q_grid=DEFAULT_Q,
    delta_grid=DEFAULT_DELTA,
    pooled: bool = False,
) -> StructureFunctionReport:
    """Scaling exponents of ``E|S_{tau+delta} - S_tau|^q`` against delta.

    ``panel`` is a DayPanel (each day is subordinated with ``spec``) or an
    iterable of already subordinated log-price paths.
    """
    q_grid = np.asarray(q_grid, dtype=float)
    delta_grid = np.asarray(delta_grid, dtype=int)
    per_day = []
    for s in _paths(panel, spec):
        m = structure_moments(np.asarray(s, dtype=float), q_grid, delta_grid)
        ok = np.all(np.isfinite(m) & (m > 0), axis=1)
        if ok.sum() >= 2:
            per_day.append((ok, m))
    if not per_day:
        raise ValueError("no day has enough increments for the structure function")

    logd = np.log(delta_grid.astype(float))
    if pooled:
        stack = np.array([np.where(ok[:, None], m, np.nan) for ok, m in per_day])
        mean_m = np.nanmean(stack, axis=0)
        ok = np.all(np.isfinite(mean_m), axis=1)
        h, a, r2 = _ols(logd[ok], np.log(mean_m[ok]))
    else:
        fits = [_ols(logd[ok], np.log(m[ok])) for ok, m in per_day]
        h = np.mean([f[0] for f in fits], axis=0)
        a = np.mean([f[1] for f in fits], axis=0)
        r2 = np.mean([f[2] for f in fits], axis=0)
    return StructureFunctionReport(
        q_grid=q_grid,
        delta_grid=delta_grid,
        Hq=h,
        Aq_log=a,
        r2=r2,
        days_averaged=len(per_day),
        mode="pooled" if pooled else "daily",
    )


def hq_linearity(report: StructureFunctionReport) -> tuple[float, float, float]:
    """OLS of ``H(q)`` on ``q``: ``(slope, intercept, r2)``.

    A monofractal process has ``H(q) = qH`` and an r^2 near one.
    """
    slope, icpt, r2 = _ols(np.asarray(report.q_grid, dtype=float), np.asarray(report.Hq)[:, None])
    return float(slope[0]), float(icpt[0]), float(r2[0])


@dataclass(frozen=True)
class LjungBoxResult:
    statistic: float
    lags: int
    p_value: float


def ljung_box(series, lags: int = 5) -> LjungBoxResult:
    """``Q = n(n+2) sum_k rho_k^2/(n-k)`` against chi-squared with ``lags`` dof."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if lags < 1:
        raise ValueError("lags must be positive")
    if n <= lags + 1:
        raise ValueError(f"series of length {n} too short for {lags} lags")
    d = x - x.mean()
    den = float(d @ d)
    if not den > 0:
        raise ValueError("zero-variance series")
    k = np.arange(1, lags + 1)
    rho = np.array([d[j:] @ d[:-j] for j in k]) / den
    q = float(n * (n + 2) * np.sum(rho**2 / (n - k)))
    return LjungBoxResult(statistic=q, lags=lags, p_value=float(stats.chi2.sf(q, lags)))


def scaling_bias(mu: float, sigma: float, c: int, theta: float) -> tuple[float, float]:
    """Gaussian daily VaR with the drift wrongly scaled by ``sqrt(c)``.

    Returns ``(biased, truth)`` = ``(mu/sqrt(c) + sigma*a, mu + sigma*a)`` with
    ``a`` the standard normal theta-quantile; their gap is ``mu*(1/sqrt(c) - 1)``.
    """
    if sigma <= 0 or c < 1 or not 0 < theta < 1:
        raise ValueError("need sigma > 0, c >= 1 and theta in (0, 1)")
    a = float(stats.norm.ppf(theta))
    return mu / np.sqrt(c) + sigma * a, mu + sigma * a
