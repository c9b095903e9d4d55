"""Closed forms for the scaled-Brownian-motion reference process.

The reference process is the driftless SDE dX_t = σ(t) dB_t. With
κ(t) = ∫₀ᵗ σ²(s) ds and γ(t) = κ(t)/κ(T), its transition densities are the
isotropic Gaussians

    P_{t|0}(x_t | x_0)        = N(x_t; x_0, κ(t) I)
    P_{T|t}(x_T | x_t)        = N(x_T; x_t, (κ(T)−κ(t)) I)
    P_{t|0,T}(x_t | x_0, x_T) = N(x_t; (1−γ)x_0 + γx_T, κ(T)γ(1−γ) I)

so conditioned paths can be drawn directly as a stochastic interpolant,
without integrating the SDE. All operations are pure functions of an
immutable schedule; callers supply their own random generators.

Shapes: states are (n, d) batches (a single (d,) vector is accepted and
returned as (d,)); t may be a scalar or an (n,) array.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularTimeError
from .schedules import NoiseSchedule

_SINGULAR_TOL = 1e-9


def _col(t):
    """Reshape time to broadcast against (n, d) states."""
    t = np.asarray(t, dtype=np.float64)
    return t[:, None] if t.ndim == 1 else t


def sample_bridge(s: NoiseSchedule, x0, xT, t, rng: np.random.Generator):
    """Draw X_t ~ P_{t|0,T}(· | x0, xT).

    Returns (1−γ(t))·x0 + γ(t)·xT + √(κ(T)γ(t)(1−γ(t)))·ε with ε ~ N(0, I).
    Exact at the endpoints: t=0 gives x0, t=T gives xT.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    xT = np.asarray(xT, dtype=np.float64)
    g = _col(s.gamma(t))
    std = np.sqrt(s.kappa_T * g * (1.0 - g))
    shape = np.broadcast_shapes(x0.shape, xT.shape, np.shape(std))
    eps = rng.standard_normal(shape)
    return (1.0 - g) * x0 + g * xT + std * eps


def _guard(t, lo, hi, what, s: NoiseSchedule):
    t_arr = np.asarray(t, dtype=np.float64)
    if lo is not None and np.any(t_arr < lo + _SINGULAR_TOL):
        raise SingularTimeError(f"{what} is singular at t={lo}")
    if hi is not None and np.any(t_arr > hi - _SINGULAR_TOL):
        raise SingularTimeError(f"{what} is singular at t={hi}")


def score_t_given_0(s: NoiseSchedule, x0, xt, t):
    """∇_{x_t} log P_{t|0}(x_t | x_0) = (x_0 − x_t)/κ(t).  Requires t > 0."""
    _guard(t, 0.0, None, "score of P_{t|0}", s)
    k = _col(s.kappa(t))
    return (np.asarray(x0, dtype=np.float64) - np.asarray(xt, dtype=np.float64)) / k


def score_T_given_t(s: NoiseSchedule, xt, xT, t):
    """∇_{x_t} log P_{T|t}(x_T | x_t) = (x_T − x_t)/(κ(T) − κ(t)).  Requires t < T."""
    _guard(t, None, s.T, "score of P_{T|t}", s)
    k = s.kappa_T - _col(s.kappa(t))
    return (np.asarray(xT, dtype=np.float64) - np.asarray(xt, dtype=np.float64)) / k


def score_bridge(s: NoiseSchedule, x0, xT, xt, t):
    """∇_{x_t} log P_{t|0,T}(x_t | x_0, x_T) for interior t.

    Equals (−x_t + (1−γ)x_0 + γx_T) / (κ(T)γ(1−γ)). The two forward-transition
    scores decompose against this quantity:

        ∇_{x_t} log P_{T|t} = (x_T−x_0)/κ(T) + γ·∇_{x_t} log P_{t|0,T}
        ∇_{x_t} log P_{t|0} = (1−γ)·∇_{x_t} log P_{t|0,T} − (x_T−x_0)/κ(T)
    """
    _guard(t, 0.0, s.T, "bridge score", s)
    g = _col(s.gamma(t))
    num = (1.0 - g) * np.asarray(x0, dtype=np.float64) \
        + g * np.asarray(xT, dtype=np.float64) \
        - np.asarray(xt, dtype=np.float64)
    return num / (s.kappa_T * g * (1.0 - g))


def brownian_bridge_drift(s: NoiseSchedule, x, xT, t):
    """Drift of the reference bridge pinned at x_T, full-drift convention:

        b(x, t) = σ(t)²·(x_T − x)/(κ(T) − κ(t)) = σ(t)²·∇_x log P_{T|t}(x_T | x)

    so that simulating dX = b dt + σ dB from any start lands on x_T.
    """
    _guard(t, None, s.T, "bridge drift", s)
    sig = _col(s.sigma(t))
    k = s.kappa_T - _col(s.kappa(t))
    return sig * sig * (np.asarray(xT, dtype=np.float64)
                        - np.asarray(x, dtype=np.float64)) / k


# Log-density helpers. Not part of the public sampling contract, but tests
# differentiate them numerically against the scores above.

def log_density_t_given_0(s, x0, xt, t):
    k = np.asarray(s.kappa(t), dtype=np.float64)
    diff = np.asarray(xt, dtype=np.float64) - np.asarray(x0, dtype=np.float64)
    d = diff.shape[-1]
    return -0.5 * np.sum(diff * diff, axis=-1) / k - 0.5 * d * np.log(2 * np.pi * k)


def log_density_T_given_t(s, xt, xT, t):
    k = s.kappa_T - np.asarray(s.kappa(t), dtype=np.float64)
    diff = np.asarray(xT, dtype=np.float64) - np.asarray(xt, dtype=np.float64)
    d = diff.shape[-1]
    return -0.5 * np.sum(diff * diff, axis=-1) / k - 0.5 * d * np.log(2 * np.pi * k)


def log_density_bridge(s, x0, xT, xt, t):
    g = np.asarray(s.gamma(t), dtype=np.float64)
    var = s.kappa_T * g * (1.0 - g)
    gc = _col(g)
    mean = (1.0 - gc) * np.asarray(x0, dtype=np.float64) + gc * np.asarray(xT, dtype=np.float64)
    diff = np.asarray(xt, dtype=np.float64) - mean
    d = diff.shape[-1]
    return -0.5 * np.sum(diff * diff, axis=-1) / var - 0.5 * d * np.log(2 * np.pi * var)
