import numpy as np
import pytest
from scipy import stats

from driftmatch.errors import DomainError, SingularTimeError
from driftmatch.reference import (
    brownian_bridge_drift,
    log_density_bridge,
    log_density_t_given_0,
    log_density_T_given_t,
    sample_bridge,
    score_bridge,
    score_t_given_0,
    score_T_given_t,
)
from driftmatch.schedules import Constant, EdmVE, Geometric


def fd_grad(f, x, h=1e-6):
    """Central-difference gradient of a scalar function of a d-vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# sample_bridge


def test_bridge_endpoints_exact(any_schedule, rng):
    x0 = np.array([1.0, -2.0, 0.5])
    xT = np.array([-0.3, 4.0, 1.0])
    assert np.array_equal(sample_bridge(any_schedule, x0, xT, 0.0, rng), x0)
    assert np.array_equal(sample_bridge(any_schedule, x0, xT, any_schedule.T, rng), xT)


def test_bridge_variance_simple_case():
    s = Constant(1.0, T=1.0)
    rng = np.random.default_rng(7)
    x0 = np.zeros((100_000, 2))
    draws = sample_bridge(s, x0, x0, 0.5, rng)
    var = draws.var(axis=0)
    assert np.all(np.abs(var - 0.25) < 0.01)


def test_bridge_moments_match_closed_form(any_schedule):
    rng = np.random.default_rng(21)
    n = 100_000
    x0 = np.array([1.0, -0.5])
    xT = np.array([-2.0, 3.0])
    t = 0.3
    draws = sample_bridge(any_schedule, np.tile(x0, (n, 1)), np.tile(xT, (n, 1)),
                          t, rng)
    g = any_schedule.gamma(t)
    mean = (1 - g) * x0 + g * xT
    var = any_schedule.kappa_T * g * (1 - g)
    se_mean = np.sqrt(var / n)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * se_mean)
    # variance of the sample variance of a Gaussian is 2 var^2 / n
    se_var = var * np.sqrt(2.0 / n)
    assert np.all(np.abs(draws.var(axis=0) - var) < 4 * se_var)
    # coordinates are independent
    c = np.cov(draws.T)[0, 1]
    assert abs(c) < 4 * var / np.sqrt(n)


def test_bridge_accepts_per_sample_times(any_schedule, rng):
    x0 = np.zeros((8, 2))
    xT = np.ones((8, 2))
    ts = np.linspace(0.1, 0.9, 8)
    out = sample_bridge(any_schedule, x0, xT, ts, rng)
    assert out.shape == (8, 2)


# ---------------------------------------------------------------------------
# transition scores


def test_score_t_given_0_values():
    s = Constant(1.0, T=1.0)
    x0 = np.array([0.0, 0.0])
    assert np.array_equal(score_t_given_0(s, x0, x0, 0.5), np.zeros(2))
    got = score_t_given_0(s, x0, np.array([2.0, 0.0]), 1.0)
    assert np.allclose(got, [-2.0, 0.0], atol=1e-12)


def test_score_T_given_t_values():
    s = Constant(1.0, T=1.0)
    xT = np.array([2.0, 0.0])
    assert np.array_equal(score_T_given_t(s, xT, xT, 0.3), np.zeros(2))
    got = score_T_given_t(s, np.zeros(2), xT, 0.0)
    assert np.allclose(got, [2.0, 0.0], atol=1e-12)


def test_scores_match_fd_of_log_density(any_schedule):
    rng = np.random.default_rng(5)
    s = any_schedule
    for _ in range(20):
        x0 = rng.normal(size=3)
        xT = rng.normal(size=3)
        xt = rng.normal(size=3)
        t = rng.uniform(0.1, 0.9)

        g1 = fd_grad(lambda z: log_density_t_given_0(s, x0, z, t), xt)
        assert np.allclose(score_t_given_0(s, x0, xt, t), g1, rtol=1e-5, atol=1e-7)

        g2 = fd_grad(lambda z: log_density_T_given_t(s, z, xT, t), xt)
        assert np.allclose(score_T_given_t(s, xt, xT, t), g2, rtol=1e-5, atol=1e-7)

        g3 = fd_grad(lambda z: log_density_bridge(s, x0, xT, z, t), xt)
        assert np.allclose(score_bridge(s, x0, xT, xt, t), g3, rtol=1e-5, atol=1e-7)


def test_bridge_score_zero_at_mean(any_schedule):
    x0 = np.array([1.0, 2.0])
    xT = np.array([-1.0, 0.0])
    t = 0.4
    g = any_schedule.gamma(t)
    mean = (1 - g) * x0 + g * xT
    got = score_bridge(any_schedule, x0, xT, mean, t)
    assert np.allclose(got, 0.0, atol=1e-12)


def decomposition_residuals(s, rng, n):
    """Max absolute residual of the two transition-score decompositions.

    Times are drawn where the bridge is non-degenerate (min(γ,1−γ) ≥ 5e-3):
    closer to the endpoints one conditional variance underflows relative to
    κ(T) and float64 cancellation in κ(T)−κ(t) dominates any formula error,
    so the comparison would measure representation noise, not correctness.
    """
    t = rng.uniform(0.01, 0.99, size=4 * n) * s.T
    g_all = s.gamma(t)
    t = t[np.minimum(g_all, 1 - g_all) >= 5e-3][:n]
    x0 = rng.normal(size=(t.size, 4))
    xT = rng.normal(size=(t.size, 4))
    xt = rng.normal(size=(t.size, 4))
    g = s.gamma(t)[:, None]
    bridge = score_bridge(s, x0, xT, xt, t)
    base = (xT - x0) / s.kappa_T
    r_T = np.max(np.abs(score_T_given_t(s, xt, xT, t) - (base + g * bridge)))
    r_0 = np.max(np.abs(score_t_given_0(s, x0, xt, t) - ((1 - g) * bridge - base)))
    return r_T, r_0


def test_score_decompositions():
    rng = np.random.default_rng(11)
    schedules = [Constant(2.5), Geometric(0.5, 1.5), EdmVE(0.001, 6.0, rho=3.0)]
    for s in schedules:
        r_T, r_0 = decomposition_residuals(s, rng, 10_000 // len(schedules) + 1)
        assert r_T <= 1e-10
        assert r_0 <= 1e-10


# ---------------------------------------------------------------------------
# singular-time guards


def test_singular_guards(any_schedule):
    x = np.zeros(2)
    T = any_schedule.T
    for t0 in (0.0, 5e-10):
        with pytest.raises(SingularTimeError):
            score_t_given_0(any_schedule, x, x, t0)
        with pytest.raises(SingularTimeError):
            score_bridge(any_schedule, x, x, x, t0)
    for tT in (T, T - 5e-10):
        with pytest.raises(SingularTimeError):
            score_T_given_t(any_schedule, x, x, tT)
        with pytest.raises(SingularTimeError):
            score_bridge(any_schedule, x, x, x, tT)
        with pytest.raises(SingularTimeError):
            brownian_bridge_drift(any_schedule, x, x, tT)


def test_time_outside_horizon_rejected():
    s = Constant(1.0)
    x = np.zeros(2)
    with pytest.raises(DomainError):
        score_t_given_0(s, x, x, 1.5)


# ---------------------------------------------------------------------------
# bridge drift


def test_bridge_drift_values():
    s = Constant(1.0, T=1.0)
    xT = np.array([1.0, 0.0])
    assert np.array_equal(brownian_bridge_drift(s, xT, xT, 0.3), np.zeros(2))
    got = brownian_bridge_drift(s, np.zeros(2), xT, 0.0)
    assert np.allclose(got, [1.0, 0.0], atol=1e-12)


def test_bridge_drift_pins_terminal_point():
    # Euler-simulate dX = b dt + sigma dB with the pinning drift; the terminal
    # ensemble mean must sit on xT within Monte Carlo error.
    s = Constant(1.0, T=1.0)
    rng = np.random.default_rng(123)
    n_paths, n_steps = 2000, 1000
    xT = np.array([2.0, -1.0])
    dt = s.T / n_steps
    x = np.tile(np.array([0.5, 0.5]), (n_paths, 1))
    for k in range(n_steps):
        t = k * dt
        b = brownian_bridge_drift(s, x, xT, t)
        x = x + b * dt + s.sigma(t) * np.sqrt(dt) * rng.standard_normal(x.shape)
    se = x.std(axis=0, ddof=1) / np.sqrt(n_paths)
    assert np.all(np.abs(x.mean(axis=0) - xT) < 3 * se)
    # the terminal spread collapses with the step size
    assert np.all(x.std(axis=0) < 5 * np.sqrt(dt))


# ---------------------------------------------------------------------------
# log-density helpers vs scipy


def test_log_densities_against_scipy(any_schedule):
    rng = np.random.default_rng(9)
    s = any_schedule
    x0 = rng.normal(size=3)
    xT = rng.normal(size=3)
    xt = rng.normal(size=3)
    t = 0.37

    k = float(s.kappa(t))
    want = stats.norm.logpdf(xt, loc=x0, scale=np.sqrt(k)).sum()
    assert log_density_t_given_0(s, x0, xt, t) == pytest.approx(want, rel=1e-12)

    kb = s.kappa_T - k
    want = stats.norm.logpdf(xT, loc=xt, scale=np.sqrt(kb)).sum()
    assert log_density_T_given_t(s, xt, xT, t) == pytest.approx(want, rel=1e-12)

    g = float(s.gamma(t))
    mean = (1 - g) * x0 + g * xT
    var = s.kappa_T * g * (1 - g)
    want = stats.norm.logpdf(xt, loc=mean, scale=np.sqrt(var)).sum()
    assert log_density_bridge(s, x0, xT, xt, t) == pytest.approx(want, rel=1e-12)
