"""Intraday return model: location-scale Student's t, optionally behind an MA(1) filter.

The location is never estimated from the day itself.  It is fixed a priori,
either at zero or at an exponential moving average of past daily returns
spread evenly over the ``c`` subordinated intervals.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal, special

logger = logging.getLogger(__name__)

NU_MIN = 2.0 + 1e-6
NU_MAX = 200.0
SIGMA_MIN = 1e-6
PHI_MAX = 0.99
NU_SEED = 4.0
SIGMA_SEED_FACTORS = (0.5, 1.0, 2.0)


class FitError(RuntimeError):
    """Raised when no multi-start run converged.  ``best`` holds the best iterate."""

    def __init__(self, message: str, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


class DriftKind(str, enum.Enum):
    ZERO = "zero"
    EMA = "ema"


@dataclass(frozen=True)
class DriftSpec:
    kind: DriftKind = DriftKind.ZERO
    beta: int = 21

    def __post_init__(self):
        object.__setattr__(self, "kind", DriftKind(self.kind))
        if self.kind is DriftKind.EMA and self.beta < 1:
            raise ValueError("EMA drift needs beta >= 1")

    @classmethod
    def parse(cls, text: str) -> "DriftSpec":
        """``"zero"``, ``"ema21"``, ``"ema5"`` ..."""
        text = text.strip().lower()
        if text == "zero":
            return cls(DriftKind.ZERO)
        if text.startswith("ema"):
            return cls(DriftKind.EMA, int(text[3:] or 21))
        raise ValueError(f"unknown drift spec {text!r}")

    def __str__(self) -> str:
        return "zero" if self.kind is DriftKind.ZERO else f"ema{self.beta}"


@dataclass(frozen=True)
class TailModel:
    """Fitted intraday law.

    ``mu`` is the location of the t variates: of the returns themselves in
    iid mode, of the MA(1) innovations when ``phi`` is set.  ``sigma`` is the
    t scale, so the variance of one variate is ``sigma**2 * nu / (nu - 2)``.
    """

    mu: float
    sigma: float
    nu: float
    c: int
    phi: float | None = None
    loglik: float = float("nan")
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.nu >= NU_MIN - 1e-12:
            raise ValueError(f"nu must be >= {NU_MIN}, got {self.nu}")
        if not self.sigma >= SIGMA_MIN - 1e-18:
            raise ValueError(f"sigma must be >= {SIGMA_MIN}, got {self.sigma}")
        if self.phi is not None and not abs(self.phi) < 1:
            raise ValueError(f"|phi| must be < 1, got {self.phi}")
        if self.c < 1:
            raise ValueError("c must be positive")

    @property
    def is_ma(self) -> bool:
        return self.phi is not None

    def weights(self) -> np.ndarray:
        """Loadings of the daily return on the underlying t variates."""
        if self.phi is None:
            return np.ones(self.c)
        w = np.full(self.c + 1, 1.0 + self.phi)
        w[0] = self.phi
        w[-1] = 1.0
        return w

    @property
    def daily_mean(self) -> float:
        return float(self.mu * self.weights().sum())


def ema_drift(daily_returns, beta: int, init_window: int = 252) -> np.ndarray:
    """Exponential moving average drift, aligned so day t only sees days < t.

    ``out[init_window]`` is the mean of the first ``init_window`` returns and
    ``out[t] = a*y[t-1] + (1-a)*out[t-1]`` afterwards, with ``a = 2/(beta+1)``.
    Entries before ``init_window`` are NaN.
    """
    y = np.asarray(daily_returns, dtype=float)
    if beta < 1:
        raise ValueError("beta must be >= 1")
    if y.size <= init_window:
        raise ValueError(
            f"EMA drift needs more than {init_window} daily returns, got {y.size}"
        )
    a = 2.0 / (beta + 1.0)
    out = np.full(y.size, np.nan)
    out[init_window] = y[:init_window].mean()
    if y.size > init_window + 1:
        # out[t] for t > W solves the first-order recursion driven by y[t-1]
        rest, _ = signal.lfilter(
            [a], [1.0, -(1.0 - a)], y[init_window:-1], zi=[(1.0 - a) * out[init_window]]
        )
        out[init_window + 1 :] = rest
    return out


def t_logpdf(x, mu, sigma, nu):
    """Log density of the location-scale Student's t."""
    z = (np.asarray(x, dtype=float) - mu) / sigma
    return (
        special.gammaln((nu + 1.0) / 2.0)
        - special.gammaln(nu / 2.0)
        - 0.5 * np.log(nu * np.pi)
        - np.log(sigma)
        - 0.5 * (nu + 1.0) * np.log1p(z * z / nu)
    )


def _t_loglik_sum(z_scaled, log_sigma, nu):
    # z_scaled = (x - mu) / sigma
    n = z_scaled.size
    const = special.gammaln((nu + 1.0) / 2.0) - special.gammaln(nu / 2.0)
    const -= 0.5 * np.log(nu * np.pi)
    return n * (const - log_sigma) - 0.5 * (nu + 1.0) * np.log1p(
        z_scaled * z_scaled / nu
    ).sum()


def _t_mean_nll(r, log_s, nu):
    """Mean negative log-likelihood of residuals ``r`` with its gradient.

    Returns ``(f, df/dr, df/dlog_s, df/dnu)``; ``df/dr`` is per element.
    """
    n = r.size
    s2nu = np.exp(2.0 * log_s) * nu
    r2 = r * r
    z2 = r2 / s2nu
    log_term = np.log1p(z2)
    w = z2 / (1.0 + z2)
    const = special.gammaln((nu + 1.0) / 2.0) - special.gammaln(nu / 2.0)
    const -= 0.5 * np.log(nu * np.pi)
    mean_log, mean_w = log_term.mean(), w.mean()
    f = log_s - const + 0.5 * (nu + 1.0) * mean_log
    d_r = (nu + 1.0) * r / (n * (s2nu + r2))
    d_logs = 1.0 - (nu + 1.0) * mean_w
    d_nu = (
        -0.5 * special.digamma((nu + 1.0) / 2.0)
        + 0.5 * special.digamma(nu / 2.0)
        + 0.5 / nu
        + 0.5 * mean_log
        - 0.5 * (nu + 1.0) * mean_w / nu
    )
    return f, d_r, d_logs, d_nu


def _returns_array(returns) -> np.ndarray:
    y = np.asarray(getattr(returns, "returns", returns), dtype=float)
    if y.ndim != 1:
        raise ValueError("returns must be one-dimensional")
    if y.size < 10:
        raise ValueError(f"need at least 10 returns, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise ValueError("returns must be finite")
    return y


def _log_sigma_cap(sd: float) -> float:
    # far above any optimum; keeps line searches away from exp overflow
    return float(np.log(max(sd, SIGMA_MIN))) + 10.0


def _lag1_autocorr(y: np.ndarray) -> float:
    d = y - y.mean()
    den = float(d @ d)
    return float(d[1:] @ d[:-1]) / den if den > 0 else 0.0


def _nelder_mead(fun, x0, bounds, maxiter):
    return optimize.minimize(
        lambda p: fun(p)[0],
        x0,
        method="Nelder-Mead",
        bounds=bounds,
        options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": maxiter},
    )


def _lbfgs(fun, x0, bounds, maxiter):
    res = optimize.minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"ftol": 1e-14, "gtol": 1e-10, "maxiter": maxiter},
    )
    if not res.success and np.isfinite(res.fun):
        # line-search stalls at machine precision count as converged when the
        # projected gradient is negligible
        lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
        hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
        pg = np.clip(res.x - res.jac, lo, hi) - res.x
        if np.max(np.abs(pg)) < 1e-7:
            res.success = True
    return res


def _multistart(fun, starts, bounds, maxiter):
    """Quasi-Newton from every start; Nelder-Mead retries any start that fails."""
    runs = []
    for x0 in starts:
        r = _lbfgs(fun, x0, bounds, maxiter)
        if not r.success:
            r = _nelder_mead(fun, x0, bounds, 20 * maxiter)
        runs.append(r)
    ok = [r for r in runs if r.success and np.isfinite(r.fun)]
    finite = [r for r in runs if np.isfinite(r.fun)]
    if not ok:
        best = min(finite, key=lambda r: r.fun) if finite else None
        raise FitError(
            "no multi-start run converged",
            best=None if best is None else best.x,
            diagnostics={"messages": [str(r.message) for r in runs]},
        )
    best = min(ok, key=lambda r: r.fun)
    return best, len(runs)


def _degenerate(y, mu_fixed, phi):
    return TailModel(
        mu=mu_fixed,
        sigma=SIGMA_MIN,
        nu=NU_MAX,
        c=y.size,
        phi=phi,
        loglik=float(_t_loglik_sum(np.zeros(y.size), np.log(SIGMA_MIN), NU_MAX)),
        diagnostics={"degenerate": True},
    )


def fit_iid_t(returns, mu_fixed: float = 0.0) -> TailModel:
    """Maximum-likelihood (sigma, nu) with the location pinned at ``mu_fixed``."""
    y = _returns_array(returns)
    if np.all(y == mu_fixed):
        return _degenerate(y, mu_fixed, None)

    d = y - mu_fixed
    sd = float(np.sqrt(np.mean(d * d)))

    def nll(p):
        log_s, nu = p
        f, _, g_s, g_nu = _t_mean_nll(d, log_s, nu)
        return f, np.array([g_s, g_nu])

    bounds = [(np.log(SIGMA_MIN), _log_sigma_cap(sd)), (NU_MIN, NU_MAX)]
    starts = [
        [np.log(max(sd * f, SIGMA_MIN)), NU_SEED] for f in SIGMA_SEED_FACTORS
    ]
    best, n_starts = _multistart(nll, starts, bounds, maxiter=500)
    log_s, nu = best.x
    return TailModel(
        mu=float(mu_fixed),
        sigma=float(max(np.exp(log_s), SIGMA_MIN)),
        nu=float(np.clip(nu, NU_MIN, NU_MAX)),
        c=y.size,
        loglik=-float(best.fun) * y.size,
        diagnostics={"starts": n_starts, "nit": int(best.nit)},
    )


def ma1_innovations(y: np.ndarray, phi: float) -> np.ndarray:
    """Invert ``y_j = phi*xi_{j-1} + xi_j`` with ``xi_0 = 0``."""
    return signal.lfilter([1.0], [1.0, phi], y)


def fit_ma1_t(returns, mu_fixed: float = 0.0) -> TailModel:
    """Conditional MLE of an MA(1) filter with Student's t innovations.

    ``mu_fixed`` is the drift per subordinated return; the innovation
    location is ``mu_fixed / (1 + phi)`` so that ``E[y_j] = mu_fixed`` for
    every phi.  The pre-sample innovation is set to zero.  The iid optimum
    (phi = 0) is always among the starting points, so the attained
    likelihood never falls below the iid fit.
    """
    y = _returns_array(returns)
    if np.all(y == mu_fixed):
        return _degenerate(y, mu_fixed, 0.0)

    iid = fit_iid_t(y, mu_fixed)
    d = y - mu_fixed
    sd = float(np.sqrt(np.mean(d * d)))
    rho = float(np.clip(_lag1_autocorr(y), -0.9, 0.9))

    def nll(p):
        phi, log_s, nu = p
        xi = ma1_innovations(y, phi)
        m = mu_fixed / (1.0 + phi)
        f, d_r, g_s, g_nu = _t_mean_nll(xi - m, log_s, nu)
        # d xi_j / d phi = -xi_{j-1} - phi * d xi_{j-1} / d phi
        dxi = signal.lfilter([1.0], [1.0, phi], -np.concatenate([[0.0], xi[:-1]]))
        g_phi = float(d_r @ (dxi + mu_fixed / (1.0 + phi) ** 2))
        return f, np.array([g_phi, g_s, g_nu])

    bounds = [(-PHI_MAX, PHI_MAX), (np.log(SIGMA_MIN), _log_sigma_cap(sd)), (NU_MIN, NU_MAX)]
    starts = [
        [rho, np.log(max(sd * f, SIGMA_MIN)), NU_SEED] for f in SIGMA_SEED_FACTORS
    ]
    starts.append([0.0, np.log(iid.sigma), iid.nu])
    best, n_starts = _multistart(nll, starts, bounds, maxiter=500)
    phi, log_s, nu = best.x
    phi = float(np.clip(phi, -PHI_MAX, PHI_MAX))
    return TailModel(
        mu=float(mu_fixed / (1.0 + phi)),
        sigma=float(max(np.exp(log_s), SIGMA_MIN)),
        nu=float(np.clip(nu, NU_MIN, NU_MAX)),
        c=y.size,
        phi=phi,
        loglik=-float(best.fun) * y.size,
        diagnostics={"starts": n_starts, "nit": int(best.nit), "iid_loglik": iid.loglik},
    )
