"""Realized-quantile benchmark: intraday empirical VaR/ES scaled by ``c**H``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scaling import Method, RiskPair, RiskSpec


@dataclass(frozen=True)
class DhConfig:
    hurst: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.hurst < 1.0:
            raise ValueError(f"hurst must be in [0, 1), got {self.hurst}")


def empirical_pair(y: np.ndarray, theta: float) -> tuple[float, float]:
    """Type-7 quantile and the mean of the returns at or below it."""
    q = float(np.quantile(y, theta))
    tail = y[y <= q]
    e = float(tail.mean()) if tail.size else float(y.min())
    return q, min(e, q)


def dh_risk_pair(returns, spec: RiskSpec, cfg: DhConfig = DhConfig()) -> RiskPair:
    """Scale the intraday empirical (VaR, ES) of the c returns by ``c**H``.

    ``hurst = 0`` returns the unscaled intraday pair.
    """
    y = np.asarray(getattr(returns, "returns", returns), dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("need at least two intraday returns")
    q, e = empirical_pair(y, spec.theta)
    k = y.size**cfg.hurst
    return RiskPair(
        var=k * q,
        es=k * e,
        method=Method.DH,
        theta=spec.theta,
        diagnostics={"c": y.size, "hurst": cfg.hurst, "q_hf": q, "e_hf": e},
    )
