"""Path-dependent regression targets ξ for each boundary coupling.

Every ξ here returns the FULL drift, so the forward SDE reads
dX = ξ dt + σ dB and the trainer never rescales. In control form the same
dynamics split as dX = σ(t)·u dt + σ(t) dB with u = ξ/σ(t); the closed-form
Gaussian drifts in :mod:`driftmatch.oracle` are written in that control
convention, one σ(t) lighter than the fields here. For a coupling Π*_{0,T}
over boundary pairs and the reference bridge between them, the drift that
matches the induced path measure is the conditional expectation
u*(x, t) = E[ξ | X_t = x]; regressing network outputs onto ξ samples is the
whole training signal.

The scalar c(t) reweights how much of the target score enters through the
X_0 side versus the X_T side:

    ξ = σ(t)² · [ (1−c)/(1−γ) · ∇log Π*_0 + c/γ · ∇log Π*_T − (x0−xt)/κ(t) ]

Any c keeps E[ξ | X_t] unchanged (the difference is a zero-mean control
variate); it only moves the conditional variance. c = γ(t) is the default.

Formulas that divide by κ(t) clamp it below a small time cutoff rather
than raising, so trainers sampling t near zero see a bounded target.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import (ConfigError, DegenerateVariateError, DomainError,
                     SingularTimeError, UnsupportedCouplingError)
from .model import DEFAULT_T_CUT
from .schedules import NoiseSchedule

_SINGULAR_TOL = 1e-9


def _col(a):
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


# ---------------------------------------------------------------------------
# control-variate schedules


class FixedGamma:
    """c(t) = γ(t); both boundary coefficients are exactly one."""

    name = "gamma"

    def c(self, s: NoiseSchedule, t):
        return np.asarray(s.gamma(t), dtype=np.float64)

    def coefficients(self, s: NoiseSchedule, t):
        shape = np.shape(np.asarray(t, dtype=np.float64))
        one = np.ones(shape) if shape else 1.0
        return one, one


class FixedFunction:
    """c(t) given directly; values must stay in [0, 1]."""

    name = "fixed"

    def __init__(self, fn: Callable):
        if not callable(fn):
            raise ConfigError("FixedFunction needs a callable c(t)")
        self.fn = fn

    def c(self, s: NoiseSchedule, t):
        c = np.asarray(self.fn(np.asarray(t, dtype=np.float64)), dtype=np.float64)
        if np.any(c < -1e-12) or np.any(c > 1.0 + 1e-12):
            raise DomainError("control variate c(t) left [0, 1]")
        return c

    def coefficients(self, s: NoiseSchedule, t):
        g = np.asarray(s.gamma(t), dtype=np.float64)
        c = self.c(s, t)
        if np.any((g < _SINGULAR_TOL) & (np.abs(c) > _SINGULAR_TOL)):
            raise SingularTimeError("c/γ is singular at t=0 unless c(0)=0")
        if np.any((1.0 - g < _SINGULAR_TOL) & (np.abs(1.0 - c) > _SINGULAR_TOL)):
            raise SingularTimeError("(1−c)/(1−γ) is singular at t=T unless c(T)=1")
        with np.errstate(divide="ignore", invalid="ignore"):
            a0 = np.where(1.0 - g < _SINGULAR_TOL, 1.0, (1.0 - c) / (1.0 - g))
            aT = np.where(g < _SINGULAR_TOL, 1.0, c / g)
        return a0, aT


class Learned:
    """c(t) = γ + γ(1−γ)·NN^φ(t); finite coefficients at both endpoints.

    The parameterization pins c(0)=0 and c(T)=1 regardless of the net, and
    the coefficient forms a0 = 1 − γ·NN^φ, aT = 1 + (1−γ)·NN^φ never see a
    0/0. A zero net reduces to c = γ exactly.
    """

    name = "learned"

    def __init__(self, net):
        if net is None:
            raise ConfigError("Learned control variate needs a network")
        self.net = net

    def c(self, s: NoiseSchedule, t):
        g = np.asarray(s.gamma(t), dtype=np.float64)
        n = np.asarray(self.net.value(t), dtype=np.float64)
        return g + g * (1.0 - g) * n

    def coefficients(self, s: NoiseSchedule, t):
        g = np.asarray(s.gamma(t), dtype=np.float64)
        n = np.asarray(self.net.value(t), dtype=np.float64)
        return 1.0 - g * n, 1.0 + (1.0 - g) * n


def cv_coefficients(cv, s: NoiseSchedule, t):
    """(a0, aT): the multipliers on the boundary scores inside ξ."""
    return cv.coefficients(s, t)


# ---------------------------------------------------------------------------
# coupling kinds (trainer-facing tags; ξ evaluation below is functional)


class BmsIndependent:
    """Π^i = product of the marginals seen in the buffer (independent pairs)."""

    name = "bms"


class AsReverseConditional:
    """Keep X_T, redraw X_0 from the prior (memoryless reverse conditional)."""

    name = "as"


class SbJoint:
    """Keep (X_0, X_T) jointly; ξ needs an injected terminal corrector."""

    name = "sb"

    def __init__(self, corrector: Optional[Callable]):
        if corrector is None or not callable(corrector):
            raise ConfigError("SbJoint needs a corrector x ↦ ∇log φ̂_T(x)")
        self.corrector = corrector


class GeneralAnalytic:
    """Arbitrary coupling given by its two joint boundary scores."""

    name = "general"

    def __init__(self, joint_score_0: Callable, joint_score_T: Callable):
        if not callable(joint_score_0) or not callable(joint_score_T):
            raise ConfigError("GeneralAnalytic needs both joint score callables")
        self.joint_score_0 = joint_score_0
        self.joint_score_T = joint_score_T


class ReferenceMarginal(NamedTuple):
    """Terminal reference Gaussian N(mean, var·I)."""

    mean: np.ndarray
    var: float


def reference_marginal_T(prior, s: NoiseSchedule) -> ReferenceMarginal:
    """P_T for a memoryless-compatible prior: the prior variance (zero for
    a point mass) widened by κ(T)."""
    if getattr(prior, "kind", None) == "gaussian":
        return ReferenceMarginal(np.asarray(prior.mean, dtype=np.float64),
                                 s.kappa_T + prior.scale ** 2)
    if getattr(prior, "kind", None) == "dirac":
        return ReferenceMarginal(np.asarray(prior.point, dtype=np.float64),
                                 s.kappa_T)
    raise UnsupportedCouplingError(f"no reference marginal for prior {prior!r}")


# ---------------------------------------------------------------------------
# ξ formulas


def xi_bms(prior, target, s: NoiseSchedule, cv, x0, xT, xt, t,
           t_cut: float = DEFAULT_T_CUT):
    """Independent-coupling target drift:

        σ(t)²·[a0·∇log p_prior(x0) + aT·∇log ρ_target(xT) − (x0−xt)/κ(t)]
    """
    if getattr(prior, "kind", None) == "dirac":
        raise UnsupportedCouplingError(
            "a Dirac prior has no score; use the reverse-conditional coupling")
    a0, aT = cv.coefficients(s, t)
    sig = _col(s.sigma(t))
    k = _col(s.kappa(np.maximum(np.asarray(t, dtype=np.float64), t_cut)))
    x0 = np.asarray(x0, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    boundary = _col(a0) * prior.score(x0) + _col(aT) * target.score(xT)
    return sig * sig * (boundary - (x0 - xt) / k)


def xi_sb(corrector, target, s: NoiseSchedule, xT, t):
    """Joint-coupling target drift σ(t)²·[∇log ρ_target(xT) − corrector(xT)].

    The corrector is ∇log φ̂_T, the terminal forward potential of the
    bridge system; with φ̂_T = P_T this reduces to the reverse-conditional
    drift below.
    """
    if corrector is None or not callable(corrector):
        raise ConfigError("xi_sb needs a corrector callable")
    sig = _col(s.sigma(t))
    xT = np.asarray(xT, dtype=np.float64)
    return sig * sig * (target.score(xT) - corrector(xT))


def xi_as(ref_T: ReferenceMarginal, target, s: NoiseSchedule, xT, t):
    """Reverse-conditional (half-bridge) drift σ(t)²·∇log(ρ_target/P_T)(xT).

    Delegates to xi_sb with the Gaussian corrector ∇log P_T, so the two
    agree bit for bit on shared inputs.
    """
    mean = np.asarray(ref_T.mean, dtype=np.float64)
    var = float(ref_T.var)

    def corrector(x):
        return (mean - x) / var

    return xi_sb(corrector, target, s, xT, t)


def xi_general(joint_score_0, joint_score_T, s: NoiseSchedule, cv,
               x0, xT, xt, t, t_cut: float = DEFAULT_T_CUT):
    """Drift for an arbitrary coupling given its joint boundary scores:

        σ(t)²·[a0·∇_{x0}log Π*(x0,xT) + aT·∇_{xT}log Π*(x0,xT) − (x0−xt)/κ(t)]
    """
    a0, aT = cv.coefficients(s, t)
    sig = _col(s.sigma(t))
    k = _col(s.kappa(np.maximum(np.asarray(t, dtype=np.float64), t_cut)))
    x0 = np.asarray(x0, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    boundary = _col(a0) * joint_score_0(x0, xT) + _col(aT) * joint_score_T(x0, xT)
    return sig * sig * (boundary - (x0 - xt) / k)


def xi_alternative(joint_score_0, joint_score_T, s: NoiseSchedule, cv,
                   x0, xT, t):
    """X_t-free form of ξ with the same conditional expectation:

        σ(t)²·[(1−c)γ/(1−γ)·∇_{x0}log Π* + c·∇_{xT}log Π* − (x0−xT)/κ(T)]

    No 1/κ(t) appears, so it stays bounded as t→0. It is singular at t→T
    unless c(T)=1 (the γ/(1−γ) factor); c = γ gives coefficients (γ, γ).
    """
    t_arr = np.asarray(t, dtype=np.float64)
    g = np.asarray(s.gamma(t_arr), dtype=np.float64)
    if isinstance(cv, Learned):
        n = np.asarray(cv.net.value(t_arr), dtype=np.float64)
        a0 = g * (1.0 - g * n)
        aT = g * (1.0 + (1.0 - g) * n)
    else:
        c = cv.c(s, t_arr)
        if np.any((1.0 - g < _SINGULAR_TOL) & (np.abs(1.0 - c) > _SINGULAR_TOL)):
            raise SingularTimeError("alternative ξ is singular at t=T unless c(T)=1")
        with np.errstate(divide="ignore", invalid="ignore"):
            a0 = np.where(1.0 - g < _SINGULAR_TOL, g, (1.0 - c) * g / (1.0 - g))
        aT = c
    sig = _col(s.sigma(t_arr))
    x0 = np.asarray(x0, dtype=np.float64)
    xT = np.asarray(xT, dtype=np.float64)
    boundary = _col(a0) * joint_score_0(x0, xT) + _col(aT) * joint_score_T(x0, xT)
    return sig * sig * (boundary - (x0 - xT) / s.kappa_T)


# ---------------------------------------------------------------------------
# optimal scalar control variate


def optimal_scalar_cv(joint_score_0, joint_score_T, s: NoiseSchedule,
                      x0, xT, xt, t, t_cut: float = DEFAULT_T_CUT,
                      center: bool = True) -> float:
    """Empirical variance-minimizing constant c at one time t.

    Writing σ⁻²ξ(c) = (1−c)·G0 + c·GT − Gv with

        G0 = ∇_{x0}log Π*/(1−γ),  GT = ∇_{xT}log Π*/γ,  Gv = (x0−xt)/κ(t),

    the pooled empirical variance of ξ(c) is a quadratic in c whose
    minimizer is

        c* = [Var(G0) − Cov(G0,GT) − Cov(G0,Gv) + Cov(GT,Gv)]
             / [Var(G0) + Var(GT) − 2·Cov(G0,GT)].

    Variances are mean squared norms and covariances mean inner products,
    centered by default (``center=False`` gives the raw-moment variant).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    xT = np.asarray(xT, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[0] < 2:
        raise DomainError("optimal_scalar_cv needs a batch of at least 2 samples")
    t = float(t)
    g = float(s.gamma(t))
    if g < _SINGULAR_TOL or 1.0 - g < _SINGULAR_TOL:
        raise SingularTimeError("c* is undefined at the endpoints")
    k = float(s.kappa(max(t, t_cut)))

    g0 = joint_score_0(x0, xT) / (1.0 - g)
    gT = joint_score_T(x0, xT) / g
    gv = (x0 - xt) / k
    if center:
        g0 = g0 - np.mean(g0, axis=0)
        gT = gT - np.mean(gT, axis=0)
        gv = gv - np.mean(gv, axis=0)

    def dot(a, b):
        return float(np.mean(np.sum(a * b, axis=1)))

    num = dot(g0, g0) - dot(g0, gT) - dot(g0, gv) + dot(gT, gv)
    den = dot(g0, g0) + dot(gT, gT) - 2.0 * dot(g0, gT)
    if abs(den) < 1e-14:
        raise DegenerateVariateError(
            "the two boundary estimators coincide; c* is undefined")
    return num / den


def independent_joint_scores(prior, target):
    """Joint scores of a product coupling: each side sees only its own
    marginal, so xi_general on these reproduces xi_bms."""
    def js0(x0, xT):
        return prior.score(x0)

    def jsT(x0, xT):
        return target.score(xT)

    return js0, jsT
