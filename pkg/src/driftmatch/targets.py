"""Unnormalized target densities, tractable priors, and benchmark energies.

Targets are plain containers: an unnormalized ``log_rho``, its gradient
``score``, the dimension, and (when one exists) an exact sampler. Energies
follow the usual convention log ρ(x) = −E(x).

Benchmark energies:

    DW-4   E(x) = (1/τ) Σ_{i<j} [ a(d_ij−d₀) + b(d_ij−d₀)² + c(d_ij−d₀)⁴ ]
           with 4 particles in the plane (d=8), a=0, b=−4, c=0.9, τ=1.

    LJ-n   E(x) = (ε/τ) Σ_{i<j} [ (r_m/d_ij)¹² − 2(r_m/d_ij)⁶ ]
                  + c_osc Σ_i ‖x_i − x̄‖²
           with n particles in R³ and x̄ the center of mass.

All evaluations accept a single d-vector or an (n, d) batch and return a
matching scalar / batch. LJ energies are clamped at ENERGY_CLAMP and LJ
scores norm-clipped at SCORE_CLIP so that early, badly-placed samples
cannot blow up an integrator.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError

ENERGY_CLAMP = 1.0e6
SCORE_CLIP = 1.0e4

_PAIR_EPS = 1e-10  # distance guard for singular pair terms


def _as_batch(x, dim: int, what: str):
    """Coerce to an (n, dim) float array; remember if the input was a vector."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise DomainError(f"{what} expects shape (n, {dim}) or ({dim},), got {np.shape(x)}")
    return x, single


# ---------------------------------------------------------------------------
# containers


@dataclasses.dataclass(frozen=True)
class TargetDensity:
    """An unnormalized density ρ(x) = exp(log_rho(x)).

    ``log_Z`` is the true log-normalizer when it happens to be known (the
    Gaussian oracle target, the mixture target); None for the physics
    energies, where Z is the quantity one estimates.
    """

    dim: int
    log_rho: Callable[[np.ndarray], np.ndarray]
    score: Callable[[np.ndarray], np.ndarray]
    exact_sampler: Optional[Callable[[int, np.random.Generator], np.ndarray]] = None
    log_Z: Optional[float] = None
    name: str = "target"


class GaussianPrior:
    """Isotropic Gaussian prior N(mean, scale² I)."""

    kind = "gaussian"

    def __init__(self, mean, scale: float, dim: Optional[int] = None):
        mean = np.asarray(mean, dtype=np.float64)
        if mean.ndim == 0:
            if dim is None:
                raise ConfigError("scalar prior mean needs an explicit dim")
            mean = np.full(dim, float(mean))
        if scale <= 0:
            raise DomainError(f"prior scale must be positive, got {scale}")
        self.mean = mean
        self.scale = float(scale)
        self.dim = mean.shape[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.scale * rng.standard_normal((n, self.dim))

    def log_density(self, x):
        x, single = _as_batch(x, self.dim, "prior log-density")
        diff = x - self.mean
        v = self.scale ** 2
        out = -0.5 * np.sum(diff * diff, axis=1) / v - 0.5 * self.dim * np.log(2 * np.pi * v)
        return out[0] if single else out

    def score(self, x):
        x, single = _as_batch(x, self.dim, "prior score")
        out = (self.mean - x) / self.scale ** 2
        return out[0] if single else out


class DiracPrior:
    """Point mass at a fixed state. Sampling only; it has no density."""

    kind = "dirac"

    def __init__(self, point, dim: Optional[int] = None):
        point = np.asarray(point, dtype=np.float64)
        if point.ndim == 0:
            if dim is None:
                raise ConfigError("scalar prior point needs an explicit dim")
            point = np.full(dim, float(point))
        self.point = point
        self.dim = point.shape[0]
        self.scale = 0.0

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.tile(self.point, (n, 1))

    def log_density(self, x):
        raise DomainError("a Dirac prior has no log-density")

    def score(self, x):
        raise DomainError("a Dirac prior has no score")


# ---------------------------------------------------------------------------
# Gaussian mixture


class GmmTarget:
    """Mixture of K unit-weight Gaussians with shared isotropic variance.

    log_rho includes the full normalizer, so log_Z = 0 by construction;
    that makes the mixture usable both as a benchmark and as a
    known-normalizer target in importance-sampling tests.
    """

    name = "gmm"
    log_Z = 0.0

    def __init__(self, means, variance: float = 1.0):
        means = np.asarray(means, dtype=np.float64)
        if means.ndim != 2:
            raise ConfigError(f"GMM means must be (K, d), got {means.shape}")
        if variance <= 0:
            raise DomainError(f"GMM variance must be positive, got {variance}")
        self.means = means
        self.variance = float(variance)
        self.K = means.shape[0]
        self.dim = means.shape[1]

    def _component_logs(self, x):
        """Per-component normalized log-densities, shape (n, K)."""
        diff = x[:, None, :] - self.means[None, :, :]
        sq = np.sum(diff * diff, axis=2)
        return -0.5 * sq / self.variance - 0.5 * self.dim * np.log(2 * np.pi * self.variance)

    def log_rho(self, x):
        x, single = _as_batch(x, self.dim, "gmm log-density")
        comp = self._component_logs(x)
        m = np.max(comp, axis=1)
        out = m + np.log(np.sum(np.exp(comp - m[:, None]), axis=1)) - np.log(self.K)
        return out[0] if single else out

    def score(self, x):
        x, single = _as_batch(x, self.dim, "gmm score")
        comp = self._component_logs(x)
        m = np.max(comp, axis=1, keepdims=True)
        w = np.exp(comp - m)
        w /= np.sum(w, axis=1, keepdims=True)
        out = (w @ self.means - x) / self.variance
        return out[0] if single else out

    def exact_sampler(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, self.K, size=n)
        return self.means[idx] + np.sqrt(self.variance) * rng.standard_normal((n, self.dim))

    def mode_weights(self) -> np.ndarray:
        return np.full(self.K, 1.0 / self.K)


def gmm_target(K: int, d: int, box_halfwidth: float, seed: int,
               variance: float = 1.0) -> GmmTarget:
    """Mixture with K means drawn uniformly from [−box, box]^d (seeded)."""
    if K < 1 or d < 1:
        raise ConfigError(f"gmm_target needs K ≥ 1 and d ≥ 1, got K={K}, d={d}")
    rng = np.random.default_rng(seed)
    means = rng.uniform(-box_halfwidth, box_halfwidth, size=(K, d))
    return GmmTarget(means, variance=variance)


def gmm_from_means(means, variance: float = 1.0) -> GmmTarget:
    """Rebuild a mixture from a persisted means matrix."""
    return GmmTarget(means, variance=variance)


def mode_assignment(g: GmmTarget, x) -> np.ndarray:
    """Index of the component with the largest weighted density at x.

    Ties go to the lowest index. With uniform weights and shared variance
    this is nearest-mean assignment.
    """
    x, single = _as_batch(x, g.dim, "mode assignment")
    comp = g._component_logs(x)  # uniform weights: log w_k is a shared constant
    idx = np.argmax(comp, axis=1)
    return int(idx[0]) if single else idx


# ---------------------------------------------------------------------------
# particle-system energies


def _pair_distances(x: np.ndarray, n_particles: int, space_dim: int):
    """Distances over the i<j triangle; returns (pos, diffs, dists, (i, j))."""
    pos = x.reshape(x.shape[0], n_particles, space_dim)
    i, j = np.triu_indices(n_particles, k=1)
    diffs = pos[:, i, :] - pos[:, j, :]
    dists = np.sqrt(np.sum(diffs * diffs, axis=2))
    return pos, diffs, dists, (i, j)


def dw4_energy(x, d0: float = 1.0, a: float = 0.0, b: float = -4.0,
               c: float = 0.9, tau: float = 1.0):
    """Pairwise double-well energy of 4 planar particles (8-vector)."""
    x, single = _as_batch(x, 8, "dw4 energy")
    _, _, d, _ = _pair_distances(x, 4, 2)
    r = d - d0
    e = np.sum(a * r + b * r ** 2 + c * r ** 4, axis=1) / tau
    return float(e[0]) if single else e


def dw4_score(x, d0: float = 1.0, a: float = 0.0, b: float = -4.0,
              c: float = 0.9, tau: float = 1.0):
    """−∇E for the double-well energy.

    dE/dd_ij = (a + 2b(d−d₀) + 4c(d−d₀)³)/τ pulls each pair along its
    separation direction; a coincident pair contributes nothing (its
    separation vector is zero).
    """
    x, single = _as_batch(x, 8, "dw4 score")
    pos, diffs, d, (i, j) = _pair_distances(x, 4, 2)
    r = d - d0
    dE = (a + 2.0 * b * r + 4.0 * c * r ** 3) / tau
    unit = diffs / np.maximum(d, _PAIR_EPS)[:, :, None]
    force = dE[:, :, None] * unit  # ∂E/∂x_i per pair, = −∂E/∂x_j
    grad = np.zeros_like(pos)
    np.add.at(grad, (slice(None), i), force)
    np.subtract.at(grad, (slice(None), j), force)
    out = -grad.reshape(x.shape)
    return out[0] if single else out


def lj_energy(x, n_particles: int, r_m: float = 1.0, eps: float = 1.0,
              tau: float = 1.0, c_osc: float = 1.0, with_flag: bool = False,
              clamp: float = ENERGY_CLAMP):
    """Lennard-Jones pair sum plus a harmonic center-of-mass oscillator.

    Near-coincident pairs drive the pair term to +inf; the returned energy
    is clamped at ``clamp`` and, with ``with_flag``, a boolean marks
    configurations where a singular pair (or the clamp) was hit.
    """
    x, single = _as_batch(x, 3 * n_particles, "lj energy")
    pos, _, d, _ = _pair_distances(x, n_particles, 3)
    singular = np.any(d < _PAIR_EPS, axis=1)
    d_safe = np.maximum(d, _PAIR_EPS)
    inv6 = (r_m / d_safe) ** 6
    e_pair = (eps / tau) * np.sum(inv6 * inv6 - 2.0 * inv6, axis=1)
    com = np.mean(pos, axis=1, keepdims=True)
    e_osc = c_osc * np.sum((pos - com) ** 2, axis=(1, 2))
    e = e_pair + e_osc
    clipped = ~np.isfinite(e) | (e > clamp)
    e = np.where(clipped, clamp, e)
    flag = singular | clipped
    if single:
        e, flag = float(e[0]), bool(flag[0])
    return (e, flag) if with_flag else e


def lj_score(x, n_particles: int, r_m: float = 1.0, eps: float = 1.0,
             tau: float = 1.0, c_osc: float = 1.0, clip: float = SCORE_CLIP):
    """−∇E for the Lennard-Jones-plus-oscillator energy, norm-clipped.

    The oscillator gradient w.r.t. particle k is 2·c_osc·(x_k − x̄): the
    cross terms through x̄ cancel because Σ_i (x_i − x̄) = 0.
    """
    x, single = _as_batch(x, 3 * n_particles, "lj score")
    pos, diffs, d, (i, j) = _pair_distances(x, n_particles, 3)
    d_safe = np.maximum(d, _PAIR_EPS)
    inv = r_m / d_safe
    inv6 = inv ** 6
    # d/dd of ε[(r_m/d)^12 − 2(r_m/d)^6] = −12ε((r_m/d)^12 − (r_m/d)^6)/d
    dE = (eps / tau) * (-12.0) * (inv6 * inv6 - inv6) / d_safe
    unit = diffs / d_safe[:, :, None]
    force = dE[:, :, None] * unit
    grad = np.zeros_like(pos)
    np.add.at(grad, (slice(None), i), force)
    np.subtract.at(grad, (slice(None), j), force)
    com = np.mean(pos, axis=1, keepdims=True)
    grad += 2.0 * c_osc * (pos - com)
    out = -grad.reshape(x.shape)
    norms = np.sqrt(np.sum(out * out, axis=1, keepdims=True))
    out = out * np.minimum(1.0, clip / np.maximum(norms, 1e-300))
    return out[0] if single else out


def dw4_target(d0: float = 1.0, a: float = 0.0, b: float = -4.0,
               c: float = 0.9, tau: float = 1.0) -> TargetDensity:
    return TargetDensity(
        dim=8,
        log_rho=lambda x: -dw4_energy(x, d0=d0, a=a, b=b, c=c, tau=tau),
        score=lambda x: dw4_score(x, d0=d0, a=a, b=b, c=c, tau=tau),
        name="dw4",
    )


def lj_target(n_particles: int, r_m: float = 1.0, eps: float = 1.0,
              tau: float = 1.0, c_osc: float = 1.0) -> TargetDensity:
    if n_particles < 2:
        raise ConfigError("lj_target needs at least two particles")
    return TargetDensity(
        dim=3 * n_particles,
        log_rho=lambda x: -lj_energy(x, n_particles, r_m=r_m, eps=eps,
                                     tau=tau, c_osc=c_osc),
        score=lambda x: lj_score(x, n_particles, r_m=r_m, eps=eps,
                                 tau=tau, c_osc=c_osc),
        name=f"lj{n_particles}",
    )


def gaussian_target(mean, scale: float, dim: Optional[int] = None,
                    offset: float = 0.0) -> TargetDensity:
    """Isotropic Gaussian as an unnormalized target.

    log_rho(x) = −‖x−μ‖²/(2·scale²) + offset, so the true normalizer is
    log_Z = offset + (d/2)·log(2π·scale²) and is carried on the target for
    tests that estimate it.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if mean.ndim == 0:
        if dim is None:
            raise ConfigError("scalar target mean needs an explicit dim")
        mean = np.full(dim, float(mean))
    if scale <= 0:
        raise DomainError(f"target scale must be positive, got {scale}")
    d = mean.shape[0]
    v = float(scale) ** 2
    log_Z = offset + 0.5 * d * np.log(2 * np.pi * v)

    def log_rho(x):
        x, single = _as_batch(x, d, "gaussian log-density")
        diff = x - mean
        out = -0.5 * np.sum(diff * diff, axis=1) / v + offset
        return out[0] if single else out

    def score(x):
        x, single = _as_batch(x, d, "gaussian score")
        out = (mean - x) / v
        return out[0] if single else out

    def sampler(n, rng):
        return mean + float(scale) * rng.standard_normal((n, d))

    return TargetDensity(dim=d, log_rho=log_rho, score=score,
                         exact_sampler=sampler, log_Z=float(log_Z),
                         name="gaussian")


# ---------------------------------------------------------------------------
# config plumbing


def target_from_config(cfg: dict):
    """Build a target from a plain config mapping (see the CLI docs)."""
    cfg = dict(cfg)
    name = cfg.pop("name", None)
    try:
        if name == "gmm":
            return gmm_target(K=int(cfg["n_modes"]), d=int(cfg["dim"]),
                              box_halfwidth=float(cfg.get("box", cfg.get("box_halfwidth", 1.0))),
                              seed=int(cfg.get("seed", 0)),
                              variance=float(cfg.get("variance", 1.0)))
        if name == "dw4":
            return dw4_target(d0=float(cfg.get("d0", 1.0)))
        if name == "lj":
            return lj_target(n_particles=int(cfg["n_particles"]),
                             c_osc=float(cfg.get("c_osc", 1.0)))
        if name == "gaussian":
            return gaussian_target(mean=np.asarray(cfg.get("mean", 0.0)),
                                   scale=float(cfg.get("scale", 1.0)),
                                   dim=cfg.get("dim"),
                                   offset=float(cfg.get("offset", 0.0)))
    except KeyError as missing:
        raise ConfigError(f"target '{name}' config is missing {missing}") from None
    raise ConfigError(f"unknown target '{name}' (expected gmm, dw4, lj, or gaussian)")


def prior_from_config(cfg: dict, dim: int):
    cfg = dict(cfg)
    kind = cfg.pop("kind", "gaussian")
    if kind == "gaussian":
        return GaussianPrior(mean=np.asarray(cfg.get("mean", 0.0)),
                             scale=float(cfg.get("scale", 1.0)), dim=dim)
    if kind == "dirac":
        return DiracPrior(point=np.asarray(cfg.get("point", 0.0)), dim=dim)
    raise ConfigError(f"unknown prior kind '{kind}' (expected gaussian or dirac)")
