"""Intrinsic-time sampling of one trading day.

A subordinator splits the day into ``c`` intervals that carry equal shares
of cumulative market activity and returns the ``c`` log returns over those
intervals.  Activity is measured by an intensity process: constant (Clock),
tri-power variation over a centred window (TPV) or traded volume (Vol).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .market_data import IntradayDay

TPV_HALF_WINDOW = 15


class SubordinatorKind(str, enum.Enum):
    CLOCK = "clock"
    TPV = "tpv"
    VOL = "vol"


@dataclass(frozen=True)
class IntensitySeries:
    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("intensity must be finite and non-negative")
        object.__setattr__(self, "lam", lam)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.lam)

    @property
    def total(self) -> float:
        return float(self.lam.sum())


@dataclass(frozen=True)
class SubordinationSpec:
    kind: SubordinatorKind = SubordinatorKind.TPV
    c: int = 78

    def __post_init__(self):
        object.__setattr__(self, "kind", SubordinatorKind(self.kind))
        if not 1 <= int(self.c) <= 390:
            raise ValueError(f"c must be in 1..390, got {self.c}")


@dataclass(frozen=True)
class SubordinatedSeries:
    """Subordinated grid ``tau`` (length c+1) and the c returns over it.

    ``fallback`` is True when the requested intensity had zero total mass
    and the Clock grid was used instead.
    """

    tau: np.ndarray
    returns: np.ndarray
    kind: SubordinatorKind = SubordinatorKind.CLOCK
    fallback: bool = False

    @property
    def c(self) -> int:
        return self.returns.size

    @property
    def daily_return(self) -> float:
        # exact summation telescopes back to S_n - S_0
        return math.fsum(self.returns)


def tri_power_products(log_prices: np.ndarray) -> np.ndarray:
    """``p[l] = |dS_{l-2}|^{2/3} |dS_{l-1}|^{2/3} |dS_l|^{2/3}`` for l >= 3, else 0."""
    a = np.abs(np.diff(log_prices)) ** (2.0 / 3.0)  # a[k] = |S_{k+1} - S_k|^{2/3}
    p = np.zeros(log_prices.size)
    p[3:] = a[:-2] * a[1:-1] * a[2:]
    return p


def intensity(day: IntradayDay, kind) -> IntensitySeries:
    kind = SubordinatorKind(kind)
    n = day.n_minutes
    if kind is SubordinatorKind.CLOCK:
        return IntensitySeries(np.ones(n + 1))
    if kind is SubordinatorKind.VOL:
        return IntensitySeries(np.concatenate([[0.0], day.volumes]))

    p = tri_power_products(day.log_prices)
    csum = np.concatenate([[0.0], np.cumsum(p)])  # csum[k] = sum(p[:k])
    i = np.arange(n + 1)
    lo = np.maximum(i - TPV_HALF_WINDOW, 0) + 3
    hi = np.minimum(i + TPV_HALF_WINDOW, n)
    lam = np.where(hi >= lo, csum[hi + 1] - csum[np.minimum(lo, n + 1)], 0.0)
    return IntensitySeries(np.maximum(lam, 0.0))


def equal_mass_grid(lam: np.ndarray, c: int) -> np.ndarray | None:
    """Bucket the n intervals into c equal-mass groups; None if no mass.

    Mass accumulates over the intervals ending at minutes 1..n, so
    ``lam[0]`` (no preceding interval) does not move any boundary.
    """
    n = lam.size - 1
    cum = np.cumsum(lam[1:])  # cum[l-1] = mass through minute l
    total = cum[-1]
    if not total > 0:
        return None

    # bucket index of each minute l: smallest j with cum_l <= total*j/c
    bucket = np.ceil(cum * c / total - 1e-12).astype(int)
    bucket = np.clip(bucket, 0, c)

    first = np.full(c + 1, n + 1)
    last = np.full(c + 1, -1)
    minutes = np.arange(1, n + 1)
    valid = bucket >= 1
    np.maximum.at(last, bucket[valid], minutes[valid])
    np.minimum.at(first, bucket[valid], minutes[valid])

    tau = np.zeros(c + 1, dtype=int)
    tau[c] = n
    for j in range(1, c):
        prev = tau[j - 1]
        cap = n - (c - j)
        t = last[j]
        if t <= prev:
            # empty or already consumed bucket: first usable index of a later one
            t = -1
            for k in range(j + 1, c + 1):
                if last[k] > prev:
                    t = first[k] if first[k] > prev else prev + 1
                    break
            if t < 0:
                t = prev + 1
        tau[j] = min(t, cap)
    return tau


def subordinate(day: IntradayDay, spec: SubordinationSpec) -> SubordinatedSeries:
    lam = intensity(day, spec.kind).lam
    tau = equal_mass_grid(lam, spec.c)
    fallback = tau is None
    if fallback:
        tau = equal_mass_grid(np.ones_like(lam), spec.c)
    s = day.log_prices[tau]
    return SubordinatedSeries(
        tau=tau, returns=np.diff(s), kind=spec.kind, fallback=fallback
    )
