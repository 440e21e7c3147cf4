"""Synthetic subordinated-return panels with known daily VaR/ES.

Days hold ``c`` returns that are iid or MA(1) in Gaussian or Student's t
innovations.  Gaussian panels have closed-form daily risk measures; t panels
get a brute-force Monte-Carlo oracle that shares no code with the scaling
module's simulator.
"""

from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .dh import DhConfig, dh_risk_pair
from .evaluation import rmse_vs_truth
from .intraday import DriftSpec, DriftKind, ema_drift, fit_iid_t, fit_ma1_t
from .scaling import McConfig, RiskSpec, cf_risk_pairs, mc_risk_pairs
from .subordinator import SubordinatedSeries

THETAS = (0.05, 0.025, 0.01)
C_GRID = (39, 78, 130)
DAILY_SD = 0.015
DAILY_DRIFT = 2e-4
ORACLE_N = 10_000_000
ORACLE_SEED_OFFSET = 0x5EED_0AC1E


class Family(str, enum.Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "t"


class Dependence(str, enum.Enum):
    IID = "iid"
    MA1 = "ma1"


@dataclass(frozen=True)
class GeneratorSpec:
    family: Family = Family.GAUSSIAN
    dependence: Dependence = Dependence.MA1
    c: int = 39
    phi: float = -0.05
    mu: float = 0.0
    sigma: float = 1e-3
    nu: float | None = None
    n_days: int = 2520
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "dependence", Dependence(self.dependence))
        if self.c < 1 or self.n_days < 1:
            raise ValueError("c and n_days must be positive")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not abs(self.phi) < 1:
            raise ValueError("|phi| must be < 1")
        if self.family is Family.STUDENT_T and not (self.nu is not None and self.nu > 2):
            raise ValueError("Student's t family needs nu > 2")

    def weights(self) -> np.ndarray:
        """Loadings of the daily return on the c+1 innovations xi_0..xi_c."""
        if self.dependence is Dependence.IID:
            w = np.ones(self.c + 1)
            w[0] = 0.0
            return w
        w = np.full(self.c + 1, 1.0 + self.phi)
        w[0] = self.phi
        w[-1] = 1.0
        return w

    def to_dict(self) -> dict:
        return {
            "family": self.family.value, "dependence": self.dependence.value, "c": self.c,
            "phi": self.phi, "mu": self.mu, "sigma": self.sigma, "nu": self.nu,
            "n_days": self.n_days, "seed": self.seed,
        }


def default_spec(family="gaussian", c: int = 39, nu: float | None = None, **kw) -> GeneratorSpec:
    """Parameters matching a daily sd of ~1.5% and drift of ~2e-4 for any c.

    For the t family sigma is the t scale, so the innovation variance is
    ``sigma^2 nu/(nu-2)`` and the scale is shrunk accordingly.
    """
    family = Family(family)
    phi = kw.pop("phi", -0.05)
    dep = Dependence(kw.pop("dependence", "ma1"))
    load = (c - 1) * (1 + phi) ** 2 + 1 + phi**2 if dep is Dependence.MA1 else c
    sd = DAILY_SD / np.sqrt(load)
    if family is Family.STUDENT_T:
        nu = 3.0 if nu is None else nu
        sd *= np.sqrt((nu - 2.0) / nu)
    mean_load = c * (1 + phi) if dep is Dependence.MA1 else c
    mu = kw.pop("mu", DAILY_DRIFT / mean_load)
    return GeneratorSpec(family=family, dependence=dep, c=c, phi=phi, mu=mu, sigma=sd, nu=nu, **kw)


@dataclass
class SyntheticPanel:
    spec: GeneratorSpec
    returns: np.ndarray  # (n_days, c)
    dates: list

    def __len__(self) -> int:
        return self.returns.shape[0]

    def __iter__(self) -> Iterable[SubordinatedSeries]:
        tau = np.arange(self.spec.c + 1)
        for row in self.returns:
            yield SubordinatedSeries(tau=tau, returns=row)

    @property
    def daily(self) -> np.ndarray:
        return self.returns.sum(axis=1)


def business_days(n: int, start: dt.date = dt.date(2000, 1, 3)) -> list[dt.date]:
    days = np.busday_offset(np.datetime64(start), np.arange(n), roll="forward")
    return [d.astype(dt.date) for d in days]


def _innovations(spec: GeneratorSpec, rng: np.random.Generator, shape) -> np.ndarray:
    if spec.family is Family.GAUSSIAN:
        z = rng.standard_normal(shape)
    else:
        z = rng.standard_t(spec.nu, shape)
    return spec.mu + spec.sigma * z


def generate(spec: GeneratorSpec) -> SyntheticPanel:
    """Draw ``n_days`` independent days.

    Both modes draw the innovations ``xi_0..xi_c``; iid days use
    ``xi_1..xi_c`` directly, MA(1) days form ``phi xi_{j-1} + xi_j``.
    """
    rng = np.random.default_rng(spec.seed)
    xi = _innovations(spec, rng, (spec.n_days, spec.c + 1))
    if spec.dependence is Dependence.IID:
        y = xi[:, 1:]
    else:
        y = spec.phi * xi[:, :-1] + xi[:, 1:]
    return SyntheticPanel(spec=spec, returns=np.ascontiguousarray(y), dates=business_days(spec.n_days))


@dataclass
class GroundTruth:
    var_true: dict
    es_true: dict
    method: str = "analytic"
    oracle_n: int | None = None
    var_se: dict = field(default_factory=dict)
    es_se: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        key = lambda d: {repr(float(k)): v for k, v in d.items()}  # noqa: E731
        return {
            "method": self.method, "oracle_n": self.oracle_n,
            "var": key(self.var_true), "es": key(self.es_true),
            "var_se": key(self.var_se), "es_se": key(self.es_se),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        unkey = lambda m: {float(k): v for k, v in (m or {}).items()}  # noqa: E731
        return cls(unkey(d["var"]), unkey(d["es"]), d.get("method", "analytic"),
                   d.get("oracle_n"), unkey(d.get("var_se")), unkey(d.get("es_se")))


def normal_var_es(mean: float, sd: float, theta: float) -> tuple[float, float]:
    z = stats.norm.ppf(theta)
    return mean + sd * z, mean - sd * stats.norm.pdf(z) / theta


def gaussian_daily_moments(spec: GeneratorSpec) -> tuple[float, float]:
    """Daily mean and variance: ``c(1+phi)mu`` and ``[(c-1)(1+phi)^2 + 1 + phi^2] sigma^2``."""
    w = spec.weights()
    return float(spec.mu * w.sum()), float(spec.sigma**2 * (w @ w))


def gaussian_ground_truth(spec: GeneratorSpec, thetas: Sequence[float] = THETAS) -> GroundTruth:
    if spec.family is not Family.GAUSSIAN:
        raise ValueError("closed-form truth needs the Gaussian family")
    m, v = gaussian_daily_moments(spec)
    pairs = {t: normal_var_es(m, np.sqrt(v), t) for t in thetas}
    return GroundTruth({t: p[0] for t, p in pairs.items()}, {t: p[1] for t, p in pairs.items()})


def _tail_bootstrap(xs: np.ndarray, theta: float, n_boot: int, rng) -> tuple[float, float]:
    """Bootstrap SE of the empirical (type-7 quantile, strict tail mean).

    Only the lowest order statistics can move either estimator, so each
    resample is drawn as a binomial count of draws landing in the lowest
    ``m`` points followed by a multinomial split among them.
    """
    n = xs.size
    k_need = int(np.floor((n - 1) * theta)) + 2
    m = min(n, k_need + int(8 * np.sqrt(k_need)) + 16)
    low = xs[:m]
    qs, es = np.empty(n_boot), np.empty(n_boot)
    h = (n - 1) * theta
    i0 = int(np.floor(h))
    frac = h - i0
    done = 0
    while done < n_boot:
        k = rng.binomial(n, m / n)
        if k < i0 + 2 and m < n:
            continue  # resample left the window too thin; redraw
        counts = rng.multinomial(k, np.full(m, 1.0 / m))
        cum = np.cumsum(counts)
        lo = low[np.searchsorted(cum, i0, side="right")]
        hi = low[np.searchsorted(cum, i0 + 1, side="right")]
        q = lo + frac * (hi - lo)
        below = low < q
        cnt = counts[below].sum()
        qs[done] = q
        es[done] = (counts[below] @ low[below]) / cnt if cnt else q
        done += 1
    return float(qs.std(ddof=1)), float(es.std(ddof=1))


def simulate_daily_oracle(spec: GeneratorSpec, oracle_n: int, seed: int) -> np.ndarray:
    """``oracle_n`` daily returns summed from freshly drawn innovations."""
    rng = np.random.default_rng(seed)
    w = spec.weights()
    rows = max(1, 4_000_000 // w.size)
    out = np.empty(oracle_n)
    for start in range(0, oracle_n, rows):
        n = min(rows, oracle_n - start)
        out[start : start + n] = _innovations(spec, rng, (n, w.size)) @ w
    return out


def t_ground_truth_oracle(
    spec: GeneratorSpec,
    thetas: Sequence[float] = THETAS,
    oracle_n: int = ORACLE_N,
    seed: int | None = None,
    n_boot: int = 200,
) -> GroundTruth:
    """Monte-Carlo truth for any family, with bootstrap standard errors."""
    if oracle_n < 1000:
        raise ValueError("oracle_n too small")
    seed = spec.seed + ORACLE_SEED_OFFSET if seed is None else seed
    xs = np.sort(simulate_daily_oracle(spec, oracle_n, seed))
    rng = np.random.default_rng([seed, 1])
    var, es, vse, ese = {}, {}, {}, {}
    for t in thetas:
        q = float(np.quantile(xs, t))
        tail = xs[xs < q]
        var[t], es[t] = q, float(tail.mean())
        vse[t], ese[t] = _tail_bootstrap(xs, t, n_boot, rng)
    return GroundTruth(var, es, "mc_oracle", oracle_n, vse, ese)


def ground_truth(spec: GeneratorSpec, thetas=THETAS, oracle_n: int = ORACLE_N) -> GroundTruth:
    if spec.family is Family.GAUSSIAN:
        return gaussian_ground_truth(spec, thetas)
    return t_ground_truth_oracle(spec, thetas, oracle_n)


# ---------------------------------------------------------------------------
# estimator comparison


@dataclass(frozen=True)
class Estimator:
    """One realized estimator: ``dh`` or a t model with a filter and drift rule."""

    name: str
    kind: str = "t"  # "t" or "dh"
    filter: str = "iid"  # "iid" or "ma1"
    drift: DriftSpec = DriftSpec()

    @classmethod
    def parse(cls, name: str) -> "Estimator":
        """``dh``, ``t-iid``, ``t-ma``, ``t-iid(21)``, ``t-ma(5)`` ..."""
        text = name.strip().lower()
        if text == "dh":
            return cls("dh", kind="dh")
        base, _, rest = text.partition("(")
        if base not in ("t-iid", "t-ma"):
            raise ValueError(f"unknown estimator {name!r}")
        drift = DriftSpec(DriftKind.EMA, int(rest.rstrip(")"))) if rest else DriftSpec()
        return cls(text, filter="ma1" if base == "t-ma" else "iid", drift=drift)


DEFAULT_ESTIMATORS = ("dh", "t-iid", "t-ma")


def estimate_panel(
    panel: SyntheticPanel,
    estimator: Estimator,
    thetas: Sequence[float] = THETAS,
    method: str = "cf",
    mc: McConfig | None = None,
    init_window: int = 252,
) -> dict:
    """Realized (VaR, ES) arrays per theta; days without a drift history are NaN."""
    n = len(panel)
    specs = [RiskSpec(t) for t in thetas]
    var = {t: np.full(n, np.nan) for t in thetas}
    es = {t: np.full(n, np.nan) for t in thetas}
    if estimator.kind == "dh":
        for i, series in enumerate(panel):
            for s in specs:
                p = dh_risk_pair(series, s, DhConfig())
                var[s.theta][i], es[s.theta][i] = p.var, p.es
        return {"var": var, "es": es}

    c = panel.spec.c
    if estimator.drift.kind is DriftKind.EMA:
        drift = ema_drift(panel.daily, estimator.drift.beta, init_window) / c
    else:
        drift = np.zeros(n)
    fit = fit_ma1_t if estimator.filter == "ma1" else fit_iid_t
    mc = mc or McConfig()
    for i, y in enumerate(panel.returns):
        if not np.isfinite(drift[i]):
            continue
        model = fit(y, drift[i])
        if method == "cf":
            pairs = cf_risk_pairs(model, specs)
        else:
            pairs = mc_risk_pairs(model, specs, replace(mc, seed=mc.seed + i))
        for s, p in zip(specs, pairs):
            var[s.theta][i], es[s.theta][i] = p.var, p.es
    return {"var": var, "es": es}


def rmse_table(estimates: dict, truth: GroundTruth) -> dict:
    """``{theta: (var_rmse, es_rmse)}`` over days with an estimate."""
    out = {}
    for t in truth.var_true:
        v, e = estimates["var"][t], estimates["es"][t]
        ok = np.isfinite(v) & np.isfinite(e)
        out[t] = (
            rmse_vs_truth(v[ok], np.full(ok.sum(), truth.var_true[t])),
            rmse_vs_truth(e[ok], np.full(ok.sum(), truth.es_true[t])),
        )
    return out


def run_experiment(
    spec: GeneratorSpec,
    estimators: Sequence[str] = DEFAULT_ESTIMATORS,
    thetas: Sequence[float] = THETAS,
    method: str = "cf",
    oracle_n: int = ORACLE_N,
    truth: GroundTruth | None = None,
) -> dict:
    """rMSE of every estimator against the ground truth of one generated panel."""
    panel = generate(spec)
    truth = truth or ground_truth(spec, thetas, oracle_n)
    table = {}
    for name in estimators:
        est = Estimator.parse(name)
        table[est.name] = rmse_table(estimate_panel(panel, est, thetas, method), truth)
    return {"spec": spec, "truth": truth, "rmse": table}


def mean_sweep(
    base: GeneratorSpec,
    annual_drifts: Sequence[float],
    estimators: Sequence[str] = ("dh", "t-iid", "t-iid(21)"),
    thetas: Sequence[float] = (0.05,),
    days_per_year: int = 252,
    method: str = "cf",
) -> list[dict]:
    """rMSE against the drift of the generating process, same seed throughout.

    ``annual_drifts`` are annualized daily drifts; each is converted to an
    innovation location so the daily mean equals ``drift/days_per_year``.
    """
    out = []
    mean_load = base.weights().sum()
    for a in annual_drifts:
        spec = replace(base, mu=a / days_per_year / mean_load)
        res = run_experiment(spec, estimators, thetas, method)
        res["annual_drift"] = a
        out.append(res)
    return out
