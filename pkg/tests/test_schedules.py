import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftmatch.errors import ConfigError, DomainError
from driftmatch.schedules import (
    Constant,
    EdmVE,
    Geometric,
    schedule_from_config,
)


def riemann_kappa(s, t, n=1_000_000):
    """Midpoint-rule integral of sigma^2 over [0, t]."""
    grid = (np.arange(n) + 0.5) * (t / n)
    return float(np.sum(s.sigma(grid) ** 2) * (t / n))


def quadrature_omega(s, t):
    """ω(t) = κ(t)/σ²(t) with κ evaluated by brute-force quadrature."""
    return riemann_kappa(s, t) / float(s.sigma(t)) ** 2


# ---------------------------------------------------------------------------
# sigma


def test_constant_sigma_is_flat():
    s = Constant(2.5)
    assert s.sigma(0.37) == 2.5
    assert s.sigma(0.0) == 2.5
    assert s.sigma(1.0) == 2.5


def test_edm_sigma_endpoints():
    s = EdmVE(0.001, 6.0, rho=3.0)
    assert s.sigma(0.0) == pytest.approx(6.0, abs=1e-12)
    assert s.sigma(1.0) == pytest.approx(0.001, abs=1e-12)


def test_geometric_sigma_endpoint():
    s = Geometric(0.5, 1.5)
    # sigma(t) = sigma_min (sigma_max/sigma_min)^(1-t) sqrt(2 ln(max/min)):
    # at t = T the geometric factor is 1.
    expected = 0.5 * np.sqrt(2.0 * np.log(3.0))
    assert s.sigma(1.0) == pytest.approx(expected, rel=1e-12)


def test_sigma_vectorized_matches_scalar(any_schedule):
    ts = np.linspace(0.0, 1.0, 17)
    vec = any_schedule.sigma(ts)
    for i, t in enumerate(ts):
        assert vec[i] == any_schedule.sigma(float(t))


# ---------------------------------------------------------------------------
# kappa


def test_kappa_zero_at_origin(any_schedule):
    assert any_schedule.kappa(0.0) == 0.0


def test_constant_kappa_closed_form():
    s = Constant(2.5)
    assert s.kappa(1.0) == 6.25
    ts = np.linspace(0.0, 1.0, 101)
    assert np.allclose(s.kappa(ts), 6.25 * ts, rtol=0, atol=1e-12)


def test_edm_kappa_against_quadrature():
    s = EdmVE(0.001, 6.0, rho=3.0)
    want = riemann_kappa(s, 0.5)
    got = s.kappa(0.5)
    assert got == pytest.approx(want, rel=1e-6)


def test_geometric_kappa_against_quadrature():
    s = Geometric(0.5, 1.5)
    want = riemann_kappa(s, 0.73)
    assert s.kappa(0.73) == pytest.approx(want, rel=1e-6)


def test_kappa_T_property(any_schedule):
    assert any_schedule.kappa_T == pytest.approx(any_schedule.kappa(1.0), rel=1e-12)


# ---------------------------------------------------------------------------
# gamma


def test_gamma_endpoints_and_midpoint_constant():
    s = Constant(2.5)
    assert s.gamma(0.0) == 0.0
    assert s.gamma(1.0) == 1.0
    assert s.gamma(0.5) == pytest.approx(0.5, abs=1e-12)


def test_gamma_T_two():
    s = Constant(1.0, T=2.0)
    assert s.gamma(1.0) == pytest.approx(0.5, abs=1e-12)
    assert s.gamma(2.0) == 1.0


def test_gamma_endpoints_all(any_schedule):
    assert any_schedule.gamma(0.0) == 0.0
    assert any_schedule.gamma(1.0) == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# omega


def test_omega_examples():
    s = Constant(2.5)
    # omega(t) = kappa(t)/sigma(t)^2 = sigma^2 t / sigma^2 = t for constant sigma.
    assert s.omega(0.0) == 0.0
    assert s.omega(0.4) == pytest.approx(0.4, rel=1e-12)


def test_omega_geometric_against_quadrature():
    s = Geometric(0.5, 1.5)
    want = quadrature_omega(s, 0.5)
    assert s.omega(0.5) == pytest.approx(want, rel=1e-5)


def test_omega_edm_against_quadrature():
    s = EdmVE(0.001, 6.0, rho=3.0)
    want = quadrature_omega(s, 0.8)
    assert s.omega(0.8) == pytest.approx(want, rel=1e-5)


# ---------------------------------------------------------------------------
# domain guards


@pytest.mark.parametrize("bad_t", [-0.5, 1.5, -1e-6])
def test_out_of_range_time_rejected(any_schedule, bad_t):
    for fn in (any_schedule.sigma, any_schedule.kappa,
               any_schedule.gamma, any_schedule.omega):
        with pytest.raises(DomainError):
            fn(bad_t)


def test_edge_tolerance_accepted(any_schedule):
    # Values a hair outside [0, T] from float round-off must not raise.
    assert np.isfinite(any_schedule.sigma(-1e-12))
    assert np.isfinite(any_schedule.sigma(1.0 + 1e-12))


# ---------------------------------------------------------------------------
# invariants on random draws


def test_random_time_invariants(any_schedule):
    rng = np.random.default_rng(42)
    ts = np.sort(rng.uniform(0.0, 1.0, 1000))
    g = any_schedule.gamma(ts)
    assert np.all(g >= -1e-12) and np.all(g <= 1.0 + 1e-12)
    assert np.all(np.diff(g) >= 0)
    k = any_schedule.kappa(ts)
    assert np.all(np.diff(k) > 0)


def test_kappa_derivative_is_sigma_squared(any_schedule):
    # The tabulated schedules integrate on a 4096-knot grid and interpolate
    # linearly in between, so the finite-difference nodes are placed on knots
    # (where the cumulative table is quadrature-accurate) with a two-knot
    # step.  Off-knot nodes would measure the interpolant's kinks, not kappa.
    rng = np.random.default_rng(3)
    idx = rng.integers(410, 3686, size=50)
    ts = idx / 4096.0
    h = 2.0 / 4096.0
    fd = (any_schedule.kappa(ts + h) - any_schedule.kappa(ts - h)) / (2 * h)
    want = any_schedule.sigma(ts) ** 2
    assert np.allclose(fd, want, rtol=1e-4)


@settings(max_examples=60, deadline=None)
@given(
    t1=st.floats(min_value=0.001, max_value=0.998),
    dt=st.floats(min_value=1e-3, max_value=0.5),
)
def test_kappa_strictly_increasing_property(t1, dt):
    t2 = min(t1 + dt, 1.0)
    for s in (Constant(2.5), Geometric(0.5, 1.5), EdmVE(0.001, 6.0, rho=3.0)):
        assert s.kappa(t2) > s.kappa(t1)


# ---------------------------------------------------------------------------
# config round trip


def test_schedule_from_config_round_trip():
    for s in (Constant(2.5, T=2.0), Geometric(0.5, 1.5), EdmVE(0.001, 6.0, rho=3.0)):
        s2 = schedule_from_config(s.describe())
        ts = np.linspace(0.0, s.T, 33)
        assert np.allclose(s2.sigma(ts), s.sigma(ts), rtol=0, atol=1e-12)
        assert s2.T == s.T


def test_schedule_from_config_unknown_kind():
    with pytest.raises(ConfigError):
        schedule_from_config({"kind": "cosine", "sigma": 1.0})


def test_bad_construction():
    with pytest.raises((ConfigError, DomainError)):
        Constant(-1.0)
    with pytest.raises((ConfigError, DomainError)):
        Geometric(1.5, 0.5)
    with pytest.raises((ConfigError, DomainError)):
        Constant(1.0, T=0.0)
