"""Noise schedules σ(t) and their integrals.

Every other module consumes time-dependent diffusion coefficients through the
NoiseSchedule interface:

    σ(t)   noise level, strictly positive on [0, T]
    κ(t) = ∫₀ᵗ σ²(s) ds   cumulative variance, strictly increasing, κ(0)=0
    γ(t) = κ(t)/κ(T)      normalized interpolation exponent, γ(0)=0, γ(T)=1
    ω(t) = κ(t)/σ²(t)     noise-prediction loss weight, ω(0)=0 by continuity

Three schedule families are provided. Constant uses closed forms. Geometric
and EdmVE precompute a cumulative quadrature table on a fixed 4096-knot grid
(composite Simpson per knot interval) and interpolate linearly between knots;
the table is built once at construction and the schedule is immutable
afterwards, so concurrent reads are safe.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, DomainError

_TABLE_KNOTS = 4096
_EDGE_TOL = 1e-9  # slack for floating-point time grids touching 0 or T


class NoiseSchedule:
    """Abstract time-dependent noise schedule on the horizon [0, T]."""

    T: float

    def __init__(self, T: float = 1.0):
        if T <= 0:
            raise DomainError(f"horizon T must be positive, got {T}")
        self.T = float(T)

    # subclasses implement the raw noise level
    def _sigma(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _kappa(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < -_EDGE_TOL) or np.any(t > self.T + _EDGE_TOL):
            raise DomainError(
                f"time outside [0, {self.T}]: min={np.min(t)}, max={np.max(t)}"
            )
        return np.clip(t, 0.0, self.T)

    def sigma(self, t):
        """σ(t). Accepts scalars or arrays, raises DomainError outside [0,T]."""
        t = self._check(t)
        return self._sigma(t)

    def kappa(self, t):
        """κ(t) = ∫₀ᵗ σ²(s) ds."""
        t = self._check(t)
        return self._kappa(t)

    def gamma(self, t):
        """γ(t) = κ(t)/κ(T) ∈ [0, 1]."""
        t = self._check(t)
        return self._kappa(t) / self.kappa_T

    def omega(self, t):
        """Noise-prediction weight ω(t) = κ(t)/σ²(t), with ω(0) = 0."""
        t = self._check(t)
        return self._kappa(t) / self._sigma(t) ** 2

    @property
    def kappa_T(self) -> float:
        """κ(T), the total accumulated variance."""
        return float(self._kappa(np.float64(self.T)))

    def describe(self) -> dict:
        """JSON-ready description used by configs and checkpoints."""
        raise NotImplementedError


class Constant(NoiseSchedule):
    """σ(t) = σ. κ(t) = σ²t and γ(t) = t/T exactly."""

    def __init__(self, sigma: float, T: float = 1.0):
        super().__init__(T)
        if sigma <= 0:
            raise DomainError(f"sigma must be positive, got {sigma}")
        self.sigma0 = float(sigma)

    def _sigma(self, t):
        return np.broadcast_to(np.float64(self.sigma0), np.shape(t)).copy() \
            if np.ndim(t) else np.float64(self.sigma0)

    def _kappa(self, t):
        return self.sigma0 ** 2 * t

    def describe(self):
        return {"kind": "constant", "sigma": self.sigma0, "T": self.T}


class _Tabulated(NoiseSchedule):
    """Shared cumulative-table machinery for non-constant schedules.

    κ is accumulated with composite Simpson over each of the 4096 knot
    intervals (one midpoint evaluation per interval) and linearly
    interpolated between knots.
    """

    def __init__(self, T: float = 1.0):
        super().__init__(T)

    def _build_table(self):
        knots = np.linspace(0.0, self.T, _TABLE_KNOTS + 1)
        mids = 0.5 * (knots[:-1] + knots[1:])
        f_knots = self._sigma(knots) ** 2
        f_mids = self._sigma(mids) ** 2
        h = knots[1] - knots[0]
        increments = (h / 6.0) * (f_knots[:-1] + 4.0 * f_mids + f_knots[1:])
        table = np.concatenate([[0.0], np.cumsum(increments)])
        self._knots = knots
        self._table = table

    def _kappa(self, t):
        return np.interp(t, self._knots, self._table)


class Geometric(_Tabulated):
    """Geometric interpolation between σ_max (at t=0) and σ_min (at t=T):

        σ(t) = σ_min (σ_max/σ_min)^{1−t/T} · √(2 log(σ_max/σ_min))

    The √(2 log r) prefactor is part of the schedule definition here; it makes
    κ(T) ≈ T·σ_max² for large ratios r = σ_max/σ_min.
    """

    def __init__(self, sigma_min: float, sigma_max: float, T: float = 1.0):
        super().__init__(T)
        if not (0 < sigma_min < sigma_max):
            raise DomainError(
                f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
            )
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self._log_ratio = math.log(sigma_max / sigma_min)
        self._prefactor = math.sqrt(2.0 * self._log_ratio)
        self._build_table()

    def _sigma(self, t):
        tau = t / self.T
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** (1.0 - tau) \
            * self._prefactor

    def describe(self):
        return {
            "kind": "geometric",
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "T": self.T,
        }


class EdmVE(_Tabulated):
    """Variance-exploding power interpolation:

        σ(t) = [(1−t/T) σ_max^{1/ρ} + (t/T) σ_min^{1/ρ}]^ρ

    σ decays from σ_max at t=0 to σ_min at t=T; ρ bends the path.
    """

    def __init__(self, sigma_min: float, sigma_max: float, rho: float = 3.0,
                 T: float = 1.0):
        super().__init__(T)
        if not (0 < sigma_min < sigma_max):
            raise DomainError(
                f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
            )
        if rho <= 0:
            raise DomainError(f"rho must be positive, got {rho}")
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self.rho = float(rho)
        self._build_table()

    def _sigma(self, t):
        tau = t / self.T
        a = self.sigma_max ** (1.0 / self.rho)
        b = self.sigma_min ** (1.0 / self.rho)
        return ((1.0 - tau) * a + tau * b) ** self.rho

    def describe(self):
        return {
            "kind": "edm_ve",
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "rho": self.rho,
            "T": self.T,
        }


def schedule_from_config(cfg: dict) -> NoiseSchedule:
    """Build a schedule from its describe() dict (used by configs/checkpoints)."""
    kind = cfg.get("kind")
    T = float(cfg.get("T", 1.0))
    try:
        if kind == "constant":
            return Constant(cfg["sigma"], T=T)
        if kind == "geometric":
            return Geometric(cfg["sigma_min"], cfg["sigma_max"], T=T)
        if kind == "edm_ve":
            return EdmVE(cfg["sigma_min"], cfg["sigma_max"], cfg.get("rho", 3.0), T=T)
    except KeyError as e:
        raise ConfigError(f"schedule config is missing {e.args[0]!r}") from e
    raise ConfigError(f"unknown schedule kind: {kind!r}")


# Functional aliases mirroring the operation names used elsewhere in the docs.
def sigma_at(s: NoiseSchedule, t):
    return s.sigma(t)


def kappa_at(s: NoiseSchedule, t):
    return s.kappa(t)


def gamma_at(s: NoiseSchedule, t):
    return s.gamma(t)


def omega_at(s: NoiseSchedule, t):
    return s.omega(t)
