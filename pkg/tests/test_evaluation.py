import datetime as dt

import numpy as np
import pytest
from scipy import stats

from rrm.evaluation import (
    ForecasterSpec,
    RealizedPanel,
    as_statistics,
    as_tests,
    as_tests_by_year,
    ema_forecast,
    fit_ar1,
    hits_frequency,
    in_sample_report,
    joint_loss,
    mean_losses,
    pinball_loss,
    rmse_vs_truth,
    rolling_forecast_eval,
)


def normal_pair(theta, sd=1.0):
    z = stats.norm.ppf(theta)
    return sd * z, -sd * stats.norm.pdf(z) / theta


def panel(y, q, e, theta=0.05):
    n = len(y)
    dates = [dt.date(2000, 1, 1) + dt.timedelta(days=i) for i in range(n)]
    return RealizedPanel(dates, y, np.broadcast_to(q, (n,)), np.broadcast_to(e, (n,)), theta)


def test_pinball_examples():
    assert pinball_loss(-1.0, -1.0, 0.05) == 0.0
    assert pinball_loss(-1.0, -2.0, 0.05) == pytest.approx(0.95)
    assert pinball_loss(0.0, 1.0, 0.05) == pytest.approx(0.05)


def test_joint_loss_examples():
    assert joint_loss(-1.0, -2.0, -3.0, 0.05) == pytest.approx(21.19315, abs=1e-5)
    assert joint_loss(-1.0, -2.0, 0.0, 0.05) == pytest.approx(1.19315, abs=1e-5)
    with pytest.raises(ValueError):
        joint_loss(-1.0, 0.0, 0.0, 0.05)


def test_losses_minimised_at_truth():
    rng = np.random.default_rng(0)
    y = rng.normal(size=200_000)
    th = 0.05
    q0, e0 = normal_pair(th)
    qs = q0 + np.linspace(-0.2, 0.2, 41)
    es = e0 + np.linspace(-0.2, 0.2, 41)
    grid = np.array([[joint_loss(q, e, y, th).mean() for e in es] for q in qs])
    i, j = np.unravel_index(np.argmin(grid), grid.shape)
    assert abs(qs[i] - q0) <= 0.03 and abs(es[j] - e0) <= 0.03
    pin = [pinball_loss(q, y, th).mean() for q in qs]
    assert abs(qs[int(np.argmin(pin))] - q0) <= 0.02


def test_joint_loss_mean_near_truth_value():
    rng = np.random.default_rng(1)
    th = 0.025
    q0, e0 = normal_pair(th)
    y = rng.normal(size=100_000)
    loss = joint_loss(q0, e0, y, th)
    boot = [loss[rng.integers(0, y.size, y.size)].mean() for _ in range(200)]
    q, e = stats.norm.ppf(th), normal_pair(th)[1]
    exact = q / e + np.log(-e) - (q - e) / e  # E[(q-y)1{y<=q}] = theta (q - e)
    assert abs(loss.mean() - exact) < 3 * np.std(boot)


def test_hits():
    y = np.linspace(-1, 1, 10)
    assert hits_frequency(panel(y, 1e9, -1e10)) == 1.0
    assert hits_frequency(panel(y, -1e9, -1e10)) == 0.0
    rng = np.random.default_rng(2)
    q, e = normal_pair(0.05)
    h = hits_frequency(panel(rng.normal(size=2520), q, e))
    assert abs(h - 0.05) <= 3 * np.sqrt(0.05 * 0.95 / 2520)


def test_rmse():
    assert rmse_vs_truth([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse_vs_truth(np.arange(5) + 0.001, np.arange(5)) == pytest.approx(0.001)
    assert rmse_vs_truth([1.0, -1.0], [0.0, 0.0]) == 1.0


def test_panel_validation():
    with pytest.raises(ValueError):
        panel([0.0], -1.0, -0.5)
    with pytest.raises(ValueError):
        RealizedPanel([dt.date(2000, 1, 1)], [0.0, 1.0], [0.0, 0.0], [-1.0, -1.0], 0.05)


def test_as_saturation():
    y = np.where(np.arange(100) % 10 == 0, -2.0, 1.0)
    p = panel(y, -1.0, -2.0, theta=0.1)
    z1, z2 = as_statistics(p)
    assert z1 == pytest.approx(1.0) and z2 == pytest.approx(1.0)
    res = as_tests(p, n_boot=2000, seed=0)
    assert res.as1_p == pytest.approx(0.5)
    assert res.n_hits == 10


def test_as_power():
    rng = np.random.default_rng(3)
    q, e = normal_pair(0.05)
    # halving ES alone would put it above VaR, so the whole pair is halved
    p = panel(rng.normal(size=2520), q / 2, e / 2)
    res = as_tests(p, n_boot=2000, seed=1)
    assert res.as1_p < 0.05 and res.as2_p < 0.05


def test_as_no_hits():
    res = as_tests(panel(np.zeros(50), -1.0, -2.0), n_boot=100)
    # Z2 = 0 < 1: no evidence of an understated ES
    assert res.as1_p is None and res.as2_p == pytest.approx(1.0)


def test_as_by_year():
    rng = np.random.default_rng(4)
    q, e = normal_pair(0.05)
    out = as_tests_by_year(panel(rng.normal(size=252 * 3), q, e), n_boot=500)
    assert len(out["years"]) == 3
    assert 0 <= out["as1_reject"] <= 1


def ar1_path(a, b, n, noise, rng, x0):
    x = np.empty(n)
    x[0] = x0
    for t in range(1, n):
        x[t] = a + b * x[t - 1] + (noise * rng.normal() if noise else 0.0)
    return x


def test_fit_ar1_recovers_exact_recursion():
    x = ar1_path(0.01, 0.6, 1260, 0.0, None, x0=-0.5)
    ah, bh = fit_ar1(x)
    assert ah == pytest.approx(0.01, abs=0.02) and bh == pytest.approx(0.6, abs=0.02)


def test_fit_ar1_noisy_within_standard_errors():
    rng = np.random.default_rng(5)
    a, b, n = 0.01, 0.6, 1260
    x = ar1_path(a, b, n, 0.01, rng, x0=a / (1 - b))
    ah, bh = fit_ar1(x)
    se_b = np.sqrt((1 - b * b) / n)
    assert abs(bh - b) < 3 * se_b


def test_ema_forecast_recursion():
    # weight alpha on the latest realized value
    x = np.array([1.0, 0.0, 0.0, 0.0])
    f = ema_forecast(x, 0, 1, 0.9)
    assert np.isnan(f[0])
    np.testing.assert_allclose(f[1:], [1.0, 0.1, 0.01])


def test_rolling_constant_series_rw():
    n = 252 * 7
    y = np.random.default_rng(6).normal(size=n)
    p = panel(y, -1.5, -2.0)
    for kind in ("rw", "ar1", "ema"):
        reps = rolling_forecast_eval(p, ForecasterSpec(kind))
        assert len(reps) == 2
        assert reps[0].train_span == (0, 1260) and reps[0].test_span == (1260, 1512)
        pin, joint = mean_losses(reps)
        assert pin == pytest.approx(pinball_loss(-1.5, y[1260:], 0.05).mean(), rel=1e-9)
        assert joint == pytest.approx(joint_loss(-1.5, -2.0, y[1260:], 0.05).mean(), rel=1e-9)


def test_rolling_requires_length_and_caps_es():
    with pytest.raises(ValueError):
        rolling_forecast_eval(panel(np.zeros(100), -1.0, -2.0), ForecasterSpec())
    n = 252 * 6
    p = panel(np.zeros(n), np.zeros(n), np.zeros(n))
    rep = rolling_forecast_eval(p, ForecasterSpec("rw"))[0]
    assert rep.diagnostics["e_capped"] == 252
    with pytest.raises(ValueError):
        ForecasterSpec("rw", alpha=1.0)


def test_in_sample_report():
    rng = np.random.default_rng(7)
    q, e = normal_pair(0.05)
    rep = in_sample_report(panel(rng.normal(size=1000), q, e), n_boot=500)
    assert 0 <= rep.hits_freq <= 1 and 0 <= rep.as2_p <= 1
    assert np.isfinite(rep.pinball) and np.isfinite(rep.joint)
