"""Closed-form Gaussian case: every identity in the library, solvable by hand.

For an isotropic Gaussian prior N(μ0, s0²I), an isotropic Gaussian target
N(μT, sT²I), and the independent coupling, the triple (X0, XT, Xt) is
jointly Gaussian per coordinate, so the marginal Π*_t, the optimal forward
and backward drifts, and the Schrödinger-bridge coupling all have explicit
per-coordinate formulas. Each derivation below is standard Gaussian
conditioning; the algebra is arranged so the (1−γ) and γ factors cancel
analytically and nothing divides by zero at the time endpoints.

With m(t) = (1−γ)μ0 + γμT and V(t) = (1−γ)²s0² + γ²sT² + κ(T)γ(1−γ):

    u*(x,t) = σ/κT · [ (μT−μ0) − ((1−γ)s0² + γ(κT−sT²))/V · (x−m) ]
    v*(x,t) = σ/κT · [ −(μT−μ0) − (γsT² + (1−γ)(κT−s0²))/V · (x−m) ]

and their coefficient numerators sum to κT, so

    u* + v* = σ·(m−x)/V = σ·∇log Π*_t(x)

holds at machine precision for every t in [0, T] — that is the duality
relation between forward drift, backward drift, and marginal score.

Every drift in this module is written in CONTROL convention: a value u
means the SDE dX = σ(t)·u dt + σ(t) dB. The regression targets in
:mod:`driftmatch.couplings` and the trained fields absorb the leading
σ(t) (full-drift convention, dX = ξ dt + σ dB), so multiply any drift
below by σ(t) before handing it to the simulator or the likelihood ODE.
"""

from __future__ import annotations

import dataclasses
from typing import NamedTuple

import numpy as np

from .errors import DomainError, SingularTimeError
from .schedules import NoiseSchedule

_SINGULAR_TOL = 1e-9


def _col(a):
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


@dataclasses.dataclass(frozen=True)
class GaussianPair:
    """Prior N(mu0, s0²I) and target N(muT, sT²I) over one schedule."""

    schedule: NoiseSchedule
    mu0: np.ndarray
    s0: float
    muT: np.ndarray
    sT: float

    def __post_init__(self):
        object.__setattr__(self, "mu0", np.atleast_1d(np.asarray(self.mu0, dtype=np.float64)))
        object.__setattr__(self, "muT", np.atleast_1d(np.asarray(self.muT, dtype=np.float64)))
        if self.s0 <= 0 or self.sT <= 0:
            raise DomainError("Gaussian pair scales must be positive")
        if self.mu0.shape != self.muT.shape:
            raise DomainError("prior and target means must share a dimension")

    @property
    def dim(self) -> int:
        return self.mu0.shape[0]


def gaussian_marginal(p: GaussianPair, t):
    """(mean, per-coordinate variance) of Π*_t for the independent coupling.

    Xt = (1−γ)X0 + γXT + √(κTγ(1−γ))ε with independent X0, XT gives
    mean (1−γ)μ0 + γμT and variance (1−γ)²s0² + γ²sT² + κTγ(1−γ).
    """
    g = np.asarray(p.schedule.gamma(t), dtype=np.float64)
    var = (1.0 - g) ** 2 * p.s0 ** 2 + g ** 2 * p.sT ** 2 \
        + p.schedule.kappa_T * g * (1.0 - g)
    mean = _col(1.0 - g) * p.mu0 + _col(g) * p.muT if g.ndim else \
        (1.0 - g) * p.mu0 + g * p.muT
    return mean, var


def gaussian_marginal_score(p: GaussianPair, x, t):
    """∇log Π*_t(x) = (m−x)/V."""
    mean, var = gaussian_marginal(p, t)
    x = np.asarray(x, dtype=np.float64)
    v = _col(var) if np.ndim(var) else var
    return (mean - x) / v


def gaussian_marginal_log_density(p: GaussianPair, x, t):
    mean, var = gaussian_marginal(p, t)
    x = np.asarray(x, dtype=np.float64)
    diff = x - mean
    v = np.asarray(var, dtype=np.float64)
    return -0.5 * np.sum(diff * diff, axis=-1) / v \
        - 0.5 * p.dim * np.log(2 * np.pi * v)


def _guard_interior(s: NoiseSchedule, t):
    # With s0, sT > 0 the drift denominators V(t) and κ_T never vanish, so
    # the closed forms extend continuously to both endpoints; only times
    # outside [0, T] are rejected.
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < -_SINGULAR_TOL) or np.any(t_arr > s.T + _SINGULAR_TOL):
        raise SingularTimeError("optimal drifts are defined on [0, T]")


def gaussian_optimal_drift(p: GaussianPair, x, t):
    """u*(x,t) = σ(t)·E[∇log P_{T|t}(X_T|X_t) | X_t = x].

    Gaussian conditioning gives E[X_T|X_t=x] = μT + (γsT²/V)(x−m); dividing
    by κT−κt = κT(1−γ) and simplifying cancels the (1−γ).
    """
    _guard_interior(p.schedule, t)
    return _u_star(p, x, t)


def _u_star(p: GaussianPair, x, t):
    g = np.asarray(p.schedule.gamma(t), dtype=np.float64)
    kT = p.schedule.kappa_T
    _, var = gaussian_marginal(p, t)
    mean = _col(1.0 - g) * p.mu0 + _col(g) * p.muT if g.ndim else \
        (1.0 - g) * p.mu0 + g * p.muT
    coef = ((1.0 - g) * p.s0 ** 2 + g * (kT - p.sT ** 2)) / var
    sig = np.asarray(p.schedule.sigma(t), dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    drift = (p.muT - p.mu0) - _col(coef) * (x - mean) if g.ndim else \
        (p.muT - p.mu0) - coef * (x - mean)
    return _col(sig) / kT * drift if g.ndim else sig / kT * drift


def gaussian_backward_drift(p: GaussianPair, x, t):
    """v*(x,t) = σ(t)·E[∇log P_{t|0}(X_t|X_0) | X_t = x], the backward twin."""
    _guard_interior(p.schedule, t)
    g = np.asarray(p.schedule.gamma(t), dtype=np.float64)
    kT = p.schedule.kappa_T
    _, var = gaussian_marginal(p, t)
    mean = _col(1.0 - g) * p.mu0 + _col(g) * p.muT if g.ndim else \
        (1.0 - g) * p.mu0 + g * p.muT
    coef = (g * p.sT ** 2 + (1.0 - g) * (kT - p.s0 ** 2)) / var
    sig = np.asarray(p.schedule.sigma(t), dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    drift = -(p.muT - p.mu0) - _col(coef) * (x - mean) if g.ndim else \
        -(p.muT - p.mu0) - coef * (x - mean)
    return _col(sig) / kT * drift if g.ndim else sig / kT * drift


# ---------------------------------------------------------------------------
# Gaussian Schrödinger bridge


class SbSystem(NamedTuple):
    """Solution of the 1-D Gaussian Schrödinger system (per coordinate).

    C is the optimal boundary cross-covariance; the terminal forward
    potential is φ̂_T ∝ N(a, p_var) with p_var possibly negative (an
    improper Gaussian is still a valid affine corrector).
    """

    C: float
    A: float
    p_var: float
    a: np.ndarray


def gaussian_sb_system(p: GaussianPair) -> SbSystem:
    """Solve the static Schrödinger system for two isotropic Gaussians.

    Writing the coupling as φ̂_0(x0)·N(xT; x0, ε)·φ_T(xT) with ε = κ(T)
    and matching the two marginals forces the cross-covariance to satisfy
    C² + εC − s0²sT² = 0, i.e. C = (√(ε² + 4s0²sT²) − ε)/2. Back-solving
    the potentials gives φ̂_0 variance A = εC/(sT²−C), and the forward
    evolution (a heat kernel of width ε) makes φ̂_T ∝ N(a, A+ε) with
    a = μ0 − (A/ε)(μT−μ0).

    In the Dirac-prior limit s0→0: C→0, A→0, so φ̂_T → N(μ0, κ(T)) and the
    joint coupling degenerates to the memoryless half bridge. In the
    κ(T)→0 limit with prior=target the coupling pairs each point with
    itself (C → s0·sT), which is the identity coupling; we document rather
    than assert that limit since ε=0 leaves the potentials unnormalizable.
    """
    eps = p.schedule.kappa_T
    C = 0.5 * (np.sqrt(eps * eps + 4.0 * p.s0 ** 2 * p.sT ** 2) - eps)
    A = eps * C / (p.sT ** 2 - C)
    p_var = A + eps
    a = p.mu0 - (A / eps) * (p.muT - p.mu0)
    return SbSystem(C=float(C), A=float(A), p_var=float(p_var), a=a)


def gaussian_sb_corrector(p: GaussianPair):
    """∇log φ̂_T as a callable x ↦ (a−x)/p_var."""
    sys = gaussian_sb_system(p)

    def corrector(x):
        return (sys.a - np.asarray(x, dtype=np.float64)) / sys.p_var

    return corrector


def gaussian_sb_joint_scores(p: GaussianPair):
    """(∇_{x0}log Π*, ∇_{xT}log Π*) of the Gaussian SB coupling.

    The coupling is Gaussian with per-coordinate covariance
    [[s0², C], [C, sT²]] and determinant s0²sT²−C² = εC.
    """
    sys = gaussian_sb_system(p)
    det = p.s0 ** 2 * p.sT ** 2 - sys.C ** 2

    def js0(x0, xT):
        d0 = np.asarray(x0, dtype=np.float64) - p.mu0
        dT = np.asarray(xT, dtype=np.float64) - p.muT
        return -(p.sT ** 2 * d0 - sys.C * dT) / det

    def jsT(x0, xT):
        d0 = np.asarray(x0, dtype=np.float64) - p.mu0
        dT = np.asarray(xT, dtype=np.float64) - p.muT
        return -(p.s0 ** 2 * dT - sys.C * d0) / det

    return js0, jsT


def gaussian_sb_coupled_sampler(p: GaussianPair):
    """Sampler for the SB coupling: (x0, xT) with Cov(x0,xT)=C·I."""
    sys = gaussian_sb_system(p)
    rho = sys.C / (p.s0 * p.sT)

    def sample(n, rng):
        e0 = rng.standard_normal((n, p.dim))
        e1 = rng.standard_normal((n, p.dim))
        x0 = p.mu0 + p.s0 * e0
        xT = p.muT + p.sT * (rho * e0 + np.sqrt(1.0 - rho * rho) * e1)
        return x0, xT

    return sample


def gaussian_sb_optimal_drift(p: GaussianPair, x, t):
    """Markov drift of the Gaussian SB path measure, control convention:
    σ(t) times this equals E[ξ_sb | X_t = x] for the full-drift ξ_sb.

    Under the coupled boundary law, E[X_T|X_t=x] = μT + Cov(X_T,X_t)/V_sb
    ·(x−m) with Cov(X_T,X_t) = (1−γ)C + γsT² and V_sb = V + 2γ(1−γ)C.
    Taking the conditional expectation of σ[∇log ρ − ∇log φ̂_T] (both
    terms affine in X_T) gives the drift below; it coincides with the
    direct conditioning form σ(E[X_T|X_t=x] − x)/(κT−κt) on (0, T).
    """
    sys = gaussian_sb_system(p)
    g = np.asarray(p.schedule.gamma(t), dtype=np.float64)
    _, var_ind = gaussian_marginal(p, t)
    v_sb = var_ind + 2.0 * g * (1.0 - g) * sys.C
    mean = _col(1.0 - g) * p.mu0 + _col(g) * p.muT if g.ndim else \
        (1.0 - g) * p.mu0 + g * p.muT
    cov_tT = (1.0 - g) * sys.C + g * p.sT ** 2
    x = np.asarray(x, dtype=np.float64)
    coef = cov_tT / v_sb
    e_xT = p.muT + (_col(coef) if g.ndim else coef) * (x - mean)
    sig = np.asarray(p.schedule.sigma(t), dtype=np.float64)
    drift = (p.muT - e_xT) / p.sT ** 2 - (sys.a - e_xT) / sys.p_var
    return (_col(sig) if g.ndim else sig) * drift


def gaussian_independent_joint_scores(p: GaussianPair):
    """Joint scores of the product coupling prior⊗target."""
    def js0(x0, xT):
        return (p.mu0 - np.asarray(x0, dtype=np.float64)) / p.s0 ** 2

    def jsT(x0, xT):
        return (p.muT - np.asarray(xT, dtype=np.float64)) / p.sT ** 2

    return js0, jsT
