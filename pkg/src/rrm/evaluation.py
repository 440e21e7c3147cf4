"""Scoring realized risk measures.

In-sample: hits frequency and bootstrap versions of the Acerbi-Szekely
ratios Z1, Z2.  Out-of-sample: AR(1), EMA and random-walk forecasts of the
realized series on rolling train/test blocks, scored by the pinball loss and
the Fissler-Ziegel (FZ0) joint loss.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DAYS_PER_YEAR = 252
N_BOOT = 10_000
E_CEILING = -1e-12


@dataclass
class RealizedPanel:
    dates: Sequence
    y: np.ndarray
    q_hat: np.ndarray
    e_hat: np.ndarray
    theta: float

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.q_hat = np.asarray(self.q_hat, dtype=float)
        self.e_hat = np.asarray(self.e_hat, dtype=float)
        n = self.y.size
        if not (len(self.dates) == n == self.q_hat.size == self.e_hat.size):
            raise ValueError("dates, y, q_hat and e_hat must have equal lengths")
        if not 0 < self.theta < 1:
            raise ValueError("theta must be in (0, 1)")
        if np.any(self.e_hat > self.q_hat + 1e-12):
            raise ValueError("e_hat must not exceed q_hat")

    def __len__(self) -> int:
        return self.y.size

    def subset(self, idx) -> "RealizedPanel":
        dates = np.asarray(self.dates, dtype=object)[idx]
        return RealizedPanel(list(dates), self.y[idx], self.q_hat[idx], self.e_hat[idx], self.theta)


def pinball_loss(q_hat, y, theta):
    """``(y - q)(theta - 1{y <= q})``."""
    q_hat = np.asarray(q_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    return (y - q_hat) * (theta - (y <= q_hat))


def joint_loss(q_hat, e_hat, y, theta):
    """FZ0 loss ``q/e - (q - y)1{y <= q}/(theta e) + log(-e)``; needs ``e < 0``."""
    q_hat = np.asarray(q_hat, dtype=float)
    e_hat = np.asarray(e_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(e_hat >= 0):
        raise ValueError("joint loss needs e_hat < 0")
    hit = y <= q_hat
    return q_hat / e_hat - (q_hat - y) * hit / (theta * e_hat) + np.log(-e_hat)


def hits_frequency(panel: RealizedPanel) -> float:
    if len(panel) == 0:
        raise ValueError("empty panel")
    return float(np.mean(panel.y <= panel.q_hat))


def rmse_vs_truth(estimates, truth) -> float:
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValueError("estimates and truth must have equal lengths")
    return float(np.sqrt(np.mean((est - tru) ** 2)))


# ---------------------------------------------------------------------------
# Acerbi-Szekely bootstrap


@dataclass(frozen=True)
class AsResult:
    z1: float
    z2: float
    as1_p: float | None
    as2_p: float | None
    n_hits: int


def _as_terms(panel: RealizedPanel):
    if np.any(panel.e_hat >= 0):
        raise ValueError("AS statistics need e_hat < 0")
    hit = (panel.y <= panel.q_hat).astype(float)
    ratio = hit * panel.y / panel.e_hat
    return hit, ratio, ratio / panel.theta


def as_statistics(panel: RealizedPanel) -> tuple[float, float]:
    """``Z1`` = mean of ``y/e`` over hits, ``Z2`` = mean of ``y 1{hit}/(theta e)``.

    Both are 1 in expectation under a correct (VaR, ES); values above 1 mean
    the ES is too close to zero.
    """
    hit, ratio, z2 = _as_terms(panel)
    n_hits = hit.sum()
    z1 = float(ratio.sum() / n_hits) if n_hits else float("nan")
    return z1, float(z2.mean())


def _upper_p(boot: np.ndarray, stat: float, target: float) -> float:
    # shift the bootstrap law to the null and count draws at least as extreme
    d = boot - stat
    gap = stat - target
    tol = 1e-12 * max(1.0, abs(stat))
    above = np.sum(d > gap + tol)
    ties = np.sum(np.abs(d - gap) <= tol)
    return float((above + 0.5 * ties) / boot.size)


def as_tests(panel: RealizedPanel, n_boot: int = N_BOOT, seed=0, chunk: int = 500) -> AsResult:
    """One-sided bootstrap p-values for ``Z1 > 1`` and ``Z2 > 1``.

    Days are resampled as ``(y, q, e)`` triples.  Ties between shifted
    bootstrap draws and the observed gap count one half, so a sample with
    no variation reports 0.5.  AS1 is missing when there are no hits.
    """
    hit, ratio, z2_terms = _as_terms(panel)
    z1, z2 = as_statistics(panel)
    n = len(panel)
    rng = np.random.default_rng(seed)
    b1 = np.empty(n_boot)
    b2 = np.empty(n_boot)
    for start in range(0, n_boot, chunk):
        m = min(chunk, n_boot - start)
        idx = rng.integers(0, n, size=(m, n))
        h = hit[idx].sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            b1[start : start + m] = ratio[idx].sum(axis=1) / h
        b2[start : start + m] = z2_terms[idx].mean(axis=1)
    n_hits = int(hit.sum())
    if n_hits:
        ok = np.isfinite(b1)
        p1 = _upper_p(b1[ok], z1, 1.0) if ok.any() else None
    else:
        p1 = None
    return AsResult(z1=z1, z2=z2, as1_p=p1, as2_p=_upper_p(b2, z2, 1.0), n_hits=n_hits)


def as_tests_by_year(
    panel: RealizedPanel, n_boot: int = N_BOOT, seed=0, alpha: float = 0.05,
    days_per_year: int = DAYS_PER_YEAR,
) -> dict:
    """One AS test per block of ``days_per_year`` days; rejection frequencies."""
    n_years = len(panel) // days_per_year
    if n_years < 1:
        raise ValueError("need at least one full year")
    seeds = np.random.SeedSequence(seed).spawn(n_years)
    rej1, rej2, years = [], [], []
    for k in range(n_years):
        sl = slice(k * days_per_year, (k + 1) * days_per_year)
        res = as_tests(panel.subset(sl), n_boot=n_boot, seed=seeds[k])
        years.append(res)
        if res.as1_p is not None:
            rej1.append(res.as1_p < alpha)
        rej2.append(res.as2_p < alpha)
    return {
        "as1_reject": float(np.mean(rej1)) if rej1 else float("nan"),
        "as2_reject": float(np.mean(rej2)),
        "years": years,
    }


# ---------------------------------------------------------------------------
# out-of-sample forecasting


class ForecasterKind(str, enum.Enum):
    AR1 = "ar1"
    EMA = "ema"
    RW = "rw"


@dataclass(frozen=True)
class ForecasterSpec:
    kind: ForecasterKind = ForecasterKind.AR1
    alpha: float = 0.9
    train_years: int = 5
    test_years: int = 1
    days_per_year: int = DAYS_PER_YEAR

    def __post_init__(self):
        object.__setattr__(self, "kind", ForecasterKind(self.kind))
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.train_years < 1 or self.test_years < 1:
            raise ValueError("train_years and test_years must be positive")


@dataclass
class BacktestReport:
    """Scores of one test block (or of a whole panel for in-sample fields)."""

    theta: float
    forecaster: str | None = None
    train_span: tuple[int, int] | None = None
    test_span: tuple[int, int] | None = None
    pinball: float = float("nan")
    joint: float = float("nan")
    hits_freq: float = float("nan")
    as1_p: float | None = None
    as2_p: float | None = None
    diagnostics: dict = field(default_factory=dict)


def fit_ar1(x) -> tuple[float, float]:
    """OLS of ``x_t = a + b x_{t-1}``; returns ``(a, b)``."""
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        raise ValueError("need at least three observations")
    X = np.column_stack([np.ones(x.size - 1), x[:-1]])
    (a, b), *_ = np.linalg.lstsq(X, x[1:], rcond=None)
    return float(a), float(b)


def ema_forecast(x: np.ndarray, start: int, init_len: int, alpha: float) -> np.ndarray:
    """``f_t = alpha x_{t-1} + (1 - alpha) f_{t-1}`` for ``t >= start + init_len``.

    ``f`` at ``start + init_len`` is the mean of ``x[start:start+init_len]``;
    earlier entries are NaN.
    """
    f = np.full(x.size, np.nan)
    t0 = start + init_len
    if t0 >= x.size:
        return f
    f[t0] = x[start:t0].mean()
    for t in range(t0 + 1, x.size):
        f[t] = alpha * x[t - 1] + (1.0 - alpha) * f[t - 1]
    return f


def _forecast(x: np.ndarray, train: slice, test: slice, spec: ForecasterSpec):
    """One-step-ahead forecasts for the test block using data before each day."""
    prev = x[test.start - 1 : test.stop - 1]
    if spec.kind is ForecasterKind.RW:
        return prev, {}
    if spec.kind is ForecasterKind.AR1:
        a, b = fit_ar1(x[train])
        return a + b * prev, {"a": a, "b": b}
    f = ema_forecast(x[: test.stop], train.start, spec.days_per_year, spec.alpha)
    return f[test], {}


def rolling_forecast_eval(panel: RealizedPanel, spec: ForecasterSpec) -> list[BacktestReport]:
    """Forecast the realized (VaR, ES) series on rolling blocks and score them.

    Blocks are ``train_years`` of training followed by ``test_years`` of
    testing, advanced by the test length.  ES forecasts that are not
    negative are capped just below zero (counted in the diagnostics).
    """
    d = spec.days_per_year
    n_train, n_test = spec.train_years * d, spec.test_years * d
    if len(panel) < n_train + n_test:
        raise ValueError(
            f"rolling evaluation needs at least {n_train + n_test} days, got {len(panel)}"
        )
    reports = []
    for start in range(0, len(panel) - n_train - n_test + 1, n_test):
        train = slice(start, start + n_train)
        test = slice(start + n_train, start + n_train + n_test)
        qf, qc = _forecast(panel.q_hat, train, test, spec)
        ef, ec = _forecast(panel.e_hat, train, test, spec)
        capped = int(np.sum(ef >= E_CEILING))
        ef = np.minimum(ef, E_CEILING)
        y = panel.y[test]
        reports.append(
            BacktestReport(
                theta=panel.theta,
                forecaster=spec.kind.value,
                train_span=(train.start, train.stop),
                test_span=(test.start, test.stop),
                pinball=float(pinball_loss(qf, y, panel.theta).mean()),
                joint=float(joint_loss(qf, ef, y, panel.theta).mean()),
                hits_freq=float(np.mean(y <= qf)),
                diagnostics={"q_coef": qc, "e_coef": ec, "e_capped": capped},
            )
        )
    return reports


def mean_losses(reports: Sequence[BacktestReport]) -> tuple[float, float]:
    """Block-averaged (pinball, joint)."""
    return (
        float(np.mean([r.pinball for r in reports])),
        float(np.mean([r.joint for r in reports])),
    )


def in_sample_report(panel: RealizedPanel, n_boot: int = N_BOOT, seed=0) -> BacktestReport:
    """Hits, AS p-values and in-sample losses over the whole panel."""
    res = as_tests(panel, n_boot=n_boot, seed=seed)
    e = np.minimum(panel.e_hat, E_CEILING)
    return BacktestReport(
        theta=panel.theta,
        pinball=float(pinball_loss(panel.q_hat, panel.y, panel.theta).mean()),
        joint=float(joint_loss(panel.q_hat, e, panel.y, panel.theta).mean()),
        hits_freq=hits_frequency(panel),
        as1_p=res.as1_p,
        as2_p=res.as2_p,
        diagnostics={"z1": res.z1, "z2": res.z2, "n_hits": res.n_hits},
    )
