"""From an intraday tail model to daily VaR and ES.

Two routes are provided.  The characteristic-function route aggregates the
intraday law in Fourier space, inverts the daily CDF with the Gil-Pelaez
integral and solves for the quantiles.  The Monte-Carlo route simulates
daily returns with antithetic pairs.  ``ensemble_risk_pair`` averages them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from .intraday import TailModel
from .quadrature import QuadratureError, panel_nodes, panel_rules

CF_CUTOFF = 1e-12
QUAD_TOL = 1e-10
X0 = -1e-3
BRACKET_LEFT = -0.2
BRACKET_RIGHT = 1e-12
N_CANDIDATES = 10
BRENT_XTOL = 1e-8
BRENT_RESTARTS = 10
BRACKET_EXPANSIONS = 4
FALLBACK_RESIDUAL = 1e-4
ES_GRID = 10


class Method(str, enum.Enum):
    CF = "cf"
    MC = "mc"
    ENSEMBLE = "ensemble"
    DH = "dh"


class RootSearchError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class RiskSpec:
    """Probability level and how the CF route turns quantiles into ES.

    ``es_rule="integral"`` evaluates the tail mean exactly from the
    characteristic function; ``"riemann"`` averages the quantiles at
    ``j*theta/es_grid_size`` for ``j = 1..es_grid_size``.
    """

    theta: float = 0.05
    es_grid_size: int = ES_GRID
    es_rule: str = "integral"

    def __post_init__(self):
        if not 0 < self.theta < 0.5:
            raise ValueError(f"theta must be in (0, 0.5), got {self.theta}")
        if self.es_grid_size < 1:
            raise ValueError("es_grid_size must be positive")
        if self.es_rule not in ("integral", "riemann"):
            raise ValueError(f"unknown es_rule {self.es_rule!r}")


@dataclass(frozen=True)
class RiskPair:
    var: float
    es: float
    method: Method
    theta: float
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass(frozen=True)
class McConfig:
    batch_size: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be a positive even integer")


# ---------------------------------------------------------------------------
# characteristic functions


SMALL_Z = 1e-2
_SERIES_TERMS = 8
_INTEGER_GAP = 1e-5


def _one_minus_psi_series(z: np.ndarray, v: float) -> np.ndarray:
    """``1 - psi`` for small ``z`` without cancellation (non-integer order).

    Uses ``K_v = pi/(2 sin v pi) (I_{-v} - I_v)``, which splits ``psi`` into an
    analytic series in ``z^2`` and a ``z^(2v)`` series.
    """
    x = 0.25 * z * z
    analytic = np.zeros_like(z)
    term = np.ones_like(z)
    for k in range(1, _SERIES_TERMS + 1):
        term = term * x / (k * (k - v))
        analytic += term
    s2 = np.ones_like(z)
    term = np.ones_like(z)
    for k in range(1, _SERIES_TERMS + 1):
        term = term * x / (k * (k + v))
        s2 += term
    with np.errstate(divide="ignore"):
        log_t2 = 2.0 * v * np.log(0.5 * z) + special.gammaln(1.0 - v) - special.gammaln(1.0 + v)
    t2 = special.gammasgn(1.0 - v) * np.exp(log_t2)
    return -analytic + t2 * s2


def _log_psi_small(z: np.ndarray, v: float) -> np.ndarray:
    r = round(v)
    if abs(v - r) < _INTEGER_GAP:
        # integer order: the two series have cancelling poles; interpolate across
        lo = _one_minus_psi_series(z, r - _INTEGER_GAP)
        hi = _one_minus_psi_series(z, r + _INTEGER_GAP)
        d = lo + (v - r + _INTEGER_GAP) / (2.0 * _INTEGER_GAP) * (hi - lo)
    else:
        d = _one_minus_psi_series(z, v)
    return np.log1p(-d)


def t_log_char_fn(u, nu: float) -> np.ndarray:
    """Log of the standard Student's t characteristic function.

    ``psi(u) = K_v(z) z^v / (Gamma(v) 2^(v-1))`` with ``v = nu/2`` and
    ``z = sqrt(nu)|u|``.  The function is real and positive.  Small ``z``
    (and any ``z`` where ``K_v`` overflows) goes through a power series so
    that ``1 - psi`` keeps full relative precision.
    """
    u = np.abs(np.asarray(u, dtype=float))
    v = 0.5 * nu
    z = math.sqrt(nu) * u
    out = np.zeros_like(z)
    big = z >= SMALL_Z * max(1.0, v)
    zb = z[big]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        logpsi = np.log(special.kve(v, zb)) - zb + v * np.log(zb)
        logpsi -= special.gammaln(v) + (v - 1.0) * math.log(2.0)
    bad = ~np.isfinite(logpsi)
    if np.any(bad):
        logpsi[bad] = _log_psi_small(zb[bad], v)
    out[big] = logpsi
    small = (~big) & (z > 0)
    if np.any(small):
        out[small] = _log_psi_small(z[small], v)
    return np.minimum(out, 0.0)


def hf_char_fn(model: TailModel) -> Callable[[np.ndarray], np.ndarray]:
    """Characteristic function of one intraday variate ``mu + sigma*T_nu``."""

    def phi(omega):
        omega = np.asarray(omega, dtype=float)
        return np.exp(1j * model.mu * omega + t_log_char_fn(model.sigma * omega, model.nu))

    return phi


def _daily_log_modulus(model: TailModel) -> Callable[[np.ndarray], np.ndarray]:
    w = model.weights()
    # MA loadings: phi once, (1+phi) c-1 times, 1 once
    uniq, counts = np.unique(np.abs(w), return_counts=True)

    def logmod(omega):
        omega = np.asarray(omega, dtype=float)
        s = np.zeros_like(omega)
        for wk, nk in zip(uniq, counts):
            if wk == 0.0:
                continue
            s += nk * t_log_char_fn(model.sigma * wk * omega, model.nu)
        return s

    return logmod


def daily_char_fn(model: TailModel) -> Callable[[np.ndarray], np.ndarray]:
    """Characteristic function of the daily return implied by ``model``.

    iid: ``phi_HF(w)^c``.  MA(1): ``phi_HF(w) phi_HF(phi w) phi_HF((1+phi) w)^(c-1)``.
    """
    logmod = _daily_log_modulus(model)
    m = model.daily_mean

    def phi(omega):
        omega = np.asarray(omega, dtype=float)
        return np.exp(1j * m * omega + logmod(omega))

    return phi


# ---------------------------------------------------------------------------
# Fourier inversion


class FourierInverter:
    """Gil-Pelaez CDF and tail expectations of one characteristic function.

    The integrand is handled through ``phase_logmod(omega) -> (alpha, logR)``
    where ``phi(omega) = exp(logR + i*alpha)``.  The Gauss-Kronrod partition
    of ``[0, omega_max]`` and the CF values on its nodes are cached and
    refined on demand, so repeated evaluations at new ``x`` cost one
    vectorised pass over the cached nodes.
    """

    def __init__(
        self,
        phase_logmod,
        *,
        tol: float = QUAD_TOL,
        cutoff: float = CF_CUTOFF,
        initial_panels: int = 16,
        limit: int = 4000,
    ):
        self.phase_logmod = phase_logmod
        self.tol = tol
        self.limit = limit
        self.omega_max = self._find_cutoff(cutoff)
        edges = np.linspace(0.0, self.omega_max, initial_panels + 1)
        self.lo, self.hi = edges[:-1], edges[1:]
        self._fill()
        self.n_cdf_calls = 0

    @classmethod
    def from_char_fn(cls, phi, **kwargs) -> "FourierInverter":
        def phase_logmod(omega):
            v = phi(omega)
            with np.errstate(divide="ignore"):
                return np.angle(v), np.log(np.abs(v))

        return cls(phase_logmod, **kwargs)

    @classmethod
    def from_model(cls, model: TailModel, **kwargs) -> "FourierInverter":
        logmod = _daily_log_modulus(model)
        m = model.daily_mean
        return cls(lambda w: (m * w, logmod(w)), **kwargs)

    def _logmod(self, omega):
        return self.phase_logmod(np.atleast_1d(np.asarray(omega, dtype=float)))[1]

    def _find_cutoff(self, cutoff: float) -> float:
        log_cut = math.log(cutoff)
        w = 1.0
        if self._logmod(w)[0] >= log_cut:
            for _ in range(400):
                w *= 2.0
                if self._logmod(w)[0] < log_cut:
                    return w
            raise QuadratureError("characteristic function does not decay", float("nan"))
        for _ in range(400):
            if self._logmod(w / 2.0)[0] >= log_cut:
                return w
            w /= 2.0
        raise QuadratureError("characteristic function vanishes near the origin", float("nan"))

    def _fill(self):
        self.nodes = panel_nodes(self.lo, self.hi)
        alpha, logr = self.phase_logmod(self.nodes.ravel())
        self.alpha = alpha.reshape(self.nodes.shape)
        self.logr = logr.reshape(self.nodes.shape)

    def _integrate(self, kernel, x: np.ndarray):
        """Integrate ``kernel(omega, alpha, logR, x)`` for every x, refining as needed.

        Stops once the summed |Kronrod - Gauss| estimate of every column is
        within ``tol``; only panels above their length share are bisected.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xs = x[None, None, :]
        while True:
            v = kernel(self.nodes[..., None], self.alpha[..., None], self.logr[..., None], xs)
            k, err = panel_rules(v, self.lo, self.hi)
            total = err.sum(axis=0)
            open_cols = total > self.tol
            if not open_cols.any():
                return k.sum(axis=0), total
            share = ((self.hi - self.lo) / self.omega_max)[:, None]
            bad = np.any(err[:, open_cols] > self.tol * share, axis=1)
            if self.lo.size + bad.sum() > self.limit:
                raise QuadratureError("Fourier inversion did not converge", float(total.max()))
            mid = 0.5 * (self.lo[bad] + self.hi[bad])
            lo = np.concatenate([self.lo[~bad], self.lo[bad], mid])
            hi = np.concatenate([self.hi[~bad], mid, self.hi[bad]])
            order = np.argsort(lo)
            self.lo, self.hi = lo[order], hi[order]
            self._fill()

    @staticmethod
    def _cdf_kernel(omega, alpha, logr, x):
        return np.exp(logr) * np.sin(alpha - omega * x) / omega

    @staticmethod
    def _abs_kernel(omega, alpha, logr, x):
        half = 0.5 * (alpha - omega * x)
        r = np.exp(logr)
        return (-np.expm1(logr) + 2.0 * r * np.sin(half) ** 2) / (omega * omega)

    def cdf(self, x, clamp: bool = True):
        """``F(x) = 1/2 - (1/pi) int_0^inf Im(exp(-i w x) phi(w)/w) dw``."""
        self.n_cdf_calls += 1
        integral, _ = self._integrate(self._cdf_kernel, x)
        f = 0.5 - integral / math.pi
        return np.clip(f, 0.0, 1.0) if clamp else f

    def mean_abs_deviation(self, x):
        """``E|Y - x|`` from ``(2/pi) int_0^inf (1 - Re(phi(w) e^{-iwx}))/w^2 dw``."""
        integral, _ = self._integrate(self._abs_kernel, x)
        # beyond omega_max the CF is negligible and the integrand is 1/w^2
        return 2.0 / math.pi * (integral + 1.0 / self.omega_max)


def gil_pelaez_cdf(phi_Y, x, **kwargs):
    """Daily CDF at ``x`` from the characteristic function ``phi_Y``."""
    inv = FourierInverter.from_char_fn(phi_Y, **kwargs)
    out = inv.cdf(x)
    return float(out[0]) if np.ndim(x) == 0 else out


# ---------------------------------------------------------------------------
# quantile search


def _candidates():
    left = -np.logspace(math.log10(-X0), math.log10(-BRACKET_LEFT), N_CANDIDATES)
    right = -np.logspace(math.log10(-X0), -12.0, N_CANDIDATES)
    right[-1] = BRACKET_RIGHT
    return left, right


class QuantileSolver:
    """Bracket-then-Brent search for ``F(x) = target`` over a shared CDF.

    Brackets come from ten log-spaced candidates on each side of
    ``x0 = -1e-3``, nearest pair first; CDF values at candidates are cached
    across targets.  The outer bracket is doubled up to four times on
    either side.  A bounded SLSQP minimisation of ``|F - target|`` is the
    last resort.
    """

    def __init__(self, cdf: Callable[[float], float]):
        self.cdf = cdf
        self._cache: dict[float, float] = {}
        left, right = _candidates()
        self.left = list(left) + [BRACKET_LEFT * 2.0**k for k in range(1, BRACKET_EXPANSIONS + 1)]
        self.right = list(right[1:]) + [-BRACKET_LEFT * 2.0 ** (k - 1) for k in range(1, BRACKET_EXPANSIONS + 2)]

    def F(self, x: float) -> float:
        if x not in self._cache:
            self._cache[x] = float(self.cdf(x))
        return self._cache[x]

    def bracket(self, target: float):
        if self.F(X0) >= target:
            b = X0
            for a in self.left[1:]:
                if self.F(a) < target:
                    return a, b
                b = a
        else:
            a = X0
            for b in self.right:
                if self.F(b) >= target:
                    return a, b
                a = b
        return None

    def solve(self, target: float) -> tuple[float, dict]:
        def f(x):
            return self.F(x) - target

        br = self.bracket(target)
        if br is not None:
            a, b = br
            if f(b) == 0.0:
                return b, {"route": "bracket", "bracket": (a, b)}
            for restart in range(BRENT_RESTARTS):
                root, res = optimize.brentq(
                    f, a, b, xtol=BRENT_XTOL, maxiter=100, full_output=True, disp=False
                )
                if res.converged:
                    return root, {"route": "brent", "bracket": br, "restarts": restart,
                                  "iterations": res.iterations}
                if f(a) * f(root) < 0:
                    b = root
                else:
                    a = root
        return self._fallback(f, target)

    def _fallback(self, f, target):
        lo, hi = min(self.left), max(self.right)
        best_x, best_r = X0, abs(f(X0))
        for ftol in (1e-12, 1e-10, 1e-8, 1e-6):
            res = optimize.minimize(
                lambda z: abs(f(float(z[0]))),
                [X0],
                method="SLSQP",
                bounds=[(lo, hi)],
                options={"ftol": ftol, "maxiter": 200},
            )
            r = abs(f(float(res.x[0])))
            if r < best_r:
                best_x, best_r = float(res.x[0]), r
            if best_r < FALLBACK_RESIDUAL:
                return best_x, {"route": "slsqp", "residual": best_r}
        raise RootSearchError("quantile search failed", best_r)


# ---------------------------------------------------------------------------
# characteristic-function route


def cf_risk_pairs(model: TailModel, specs: Sequence[RiskSpec]) -> list[RiskPair]:
    """CF-route (VaR, ES) for several levels, sharing one Fourier inverter."""
    inv = FourierInverter.from_model(model)
    solver = QuantileSolver(lambda x: inv.cdf(x)[0])
    quantiles: dict[float, float] = {}

    def q(level: float) -> float:
        if level not in quantiles:
            quantiles[level], _ = solver.solve(level)
        return quantiles[level]

    out = []
    for spec in specs:
        var = q(spec.theta)
        grid = [spec.theta * j / spec.es_grid_size for j in range(1, spec.es_grid_size + 1)]
        if spec.es_rule == "riemann":
            es = float(np.mean([q(level) for level in grid]))
        else:
            # ES = q - E[(q - Y)^+]/theta with 2E[(q-Y)^+] = (q - EY) + E|Y - q|
            mad = float(inv.mean_abs_deviation(var)[0])
            es = var - 0.5 * ((var - model.daily_mean) + mad) / spec.theta
            es = min(es, var)
        diag = {
            "omega_max": inv.omega_max,
            "n_panels": int(inv.lo.size),
            "cdf_calls": inv.n_cdf_calls,
            "es_rule": spec.es_rule,
        }
        if model.nu < 2.5:
            diag["warning"] = "nu below 2.5: heavy tails, slow CF decay"
        out.append(RiskPair(var=float(var), es=float(es), method=Method.CF,
                            theta=spec.theta, diagnostics=diag))
    return out


def cf_risk_pair(model: TailModel, spec: RiskSpec) -> RiskPair:
    return cf_risk_pairs(model, [spec])[0]


# ---------------------------------------------------------------------------
# Monte-Carlo route


def standard_t(rng: np.random.Generator, nu: float, size: int) -> np.ndarray:
    """Student's t variates by Bailey's polar method."""
    out = np.empty(size)
    filled = 0
    while filled < size:
        need = size - filled
        m = int(need * 1.3) + 16
        uv = rng.random((2, m)) * 2.0 - 1.0
        w = uv[0] * uv[0] + uv[1] * uv[1]
        keep = (w < 1.0) & (w > 0.0)
        u, w = uv[0][keep][:need], w[keep][:need]
        out[filled : filled + u.size] = u * np.sqrt(nu * np.expm1(-2.0 / nu * np.log(w)) / w)
        filled += u.size
    return out


def simulate_daily(model: TailModel, cfg: McConfig, chunk_elems: int = 2_000_000) -> np.ndarray:
    """``cfg.batch_size`` daily returns as antithetic pairs ``m +/- sigma*S``."""
    rng = np.random.default_rng(cfg.seed)
    w = model.weights()
    half = cfg.batch_size // 2
    rows = max(1, chunk_elems // w.size)
    s = np.empty(half)
    for start in range(0, half, rows):
        n = min(rows, half - start)
        z = standard_t(rng, model.nu, n * w.size).reshape(n, w.size)
        s[start : start + n] = z @ w
    m = model.daily_mean
    return np.concatenate([m + model.sigma * s, m - model.sigma * s])


def empirical_risk_pair(sample: np.ndarray, theta: float) -> tuple[float, float]:
    q = float(np.quantile(sample, theta))
    tail = sample[sample < q]
    if tail.size == 0:
        raise RuntimeError("no simulated values below the quantile")
    return q, float(tail.mean())


def mc_risk_pairs(model: TailModel, specs: Sequence[RiskSpec], cfg: McConfig) -> list[RiskPair]:
    sample = simulate_daily(model, cfg)
    out = []
    for spec in specs:
        if spec.theta * sample.size < 1:
            raise RuntimeError("batch too small for this theta")
        var, es = empirical_risk_pair(sample, spec.theta)
        diag = {"batch_size": cfg.batch_size, "seed": cfg.seed}
        if model.nu < 2.5:
            diag["warning"] = "nu below 2.5: heavy tails"
        out.append(RiskPair(var=var, es=min(es, var), method=Method.MC,
                            theta=spec.theta, diagnostics=diag))
    return out


def mc_risk_pair(model: TailModel, spec: RiskSpec, cfg: McConfig) -> RiskPair:
    return mc_risk_pairs(model, [spec], cfg)[0]


def ensemble_risk_pair(cf: RiskPair, mc: RiskPair) -> RiskPair:
    if cf.theta != mc.theta:
        raise ValueError("ensemble members must share theta")
    return RiskPair(
        var=0.5 * (cf.var + mc.var),
        es=0.5 * (cf.es + mc.es),
        method=Method.ENSEMBLE,
        theta=cf.theta,
        diagnostics={"members": (cf.method.value, mc.method.value)},
    )
