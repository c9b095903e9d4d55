"""Damped fixed-point drift matching: simulate, couple, regress, repeat.

One outer step freezes the current field u_i, simulates a batch of forward
paths under it, rebuilds the endpoint coupling per the configured kind,
refills the replay buffer wholesale, and then runs M gradient steps on

    L(θ) = E ω̃(t)·[ ½‖ξ − u_θ(X_t,t)‖² + (η/2)‖u_i(X_t,t) − u_θ(X_t,t)‖² ]

with t uniform on (t_cut, T), X_t a fresh reference-bridge draw per step,
and ω̃ the noise-prediction weighting. Since the network natively predicts
û = (√κ/σ)·drift, the weighting is applied by regressing û onto
ξ̂ = (√κ/σ)·ξ and penalizing against û_i in the same scaled space — both
terms see the identical reweighting.

Minimizing the η-damped loss over an expressive field lands on
α·Φ(u_i) + (1−α)·u_i with α = 1/(1+η), where Φ is the Markovian
projection; η=0 is the plain fixed-point iteration.
"""

from __future__ import annotations

import dataclasses
import time
from typing import Callable, List, Optional

import numpy as np

from . import couplings as cpl
from .errors import (ConfigError, DataQualityError, DivergenceError,
                     UnsupportedCouplingError)
from .model import (DEFAULT_T_CUT, DriftField, OptimizerState,
                    load_checkpoint, optimizer_step, save_checkpoint)
from .reference import sample_bridge
from .schedules import NoiseSchedule

_MAX_SKIP_FRACTION = 0.10


@dataclasses.dataclass
class TrainConfig:
    schedule: NoiseSchedule
    prior: object
    target: object
    coupling: object = dataclasses.field(default_factory=cpl.BmsIndependent)
    cv: object = dataclasses.field(default_factory=cpl.FixedGamma)
    outer_steps: int = 1000
    grad_steps: int = 1000
    buffer_size: int = 30000
    batch_size: int = 1024
    em_steps: int = 100
    eta: float = 0.0
    lr: float = 1e-4
    clip: float = 1.0
    weight_decay: float = 0.0
    seed: int = 0
    t_cut: float = DEFAULT_T_CUT
    hidden: int = 512
    blocks: int = 6
    n_freq: int = 64
    activation: str = "gelu"
    checkpoint_interval: int = 0
    checkpoint_dir: Optional[str] = None
    stratified_t: bool = False
    reuse_fraction: float = 0.0

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError(f"damping must be nonnegative, got eta={self.eta}")
        if not (0.0 <= self.reuse_fraction < 1.0):
            raise ConfigError("reuse_fraction must lie in [0, 1)")
        if self.buffer_size < 1 or self.batch_size < 1 or self.em_steps < 1:
            raise ConfigError("buffer, batch, and EM step counts must be positive")

    @property
    def alpha(self) -> float:
        return 1.0 / (1.0 + self.eta)


@dataclasses.dataclass
class Trajectory:
    times: np.ndarray      # (n_steps+1,)
    states: np.ndarray     # (n_steps+1, n, d)
    increments: np.ndarray  # (n_steps, n, d), the standard-normal draws

    @property
    def x0(self):
        return self.states[0]

    @property
    def xT(self):
        return self.states[-1]


class ReplayBuffer:
    """Fixed-capacity store of (x0, xT) pairs, replaced wholesale."""

    def __init__(self, capacity: int, dim: int):
        self.capacity = capacity
        self.x0 = np.zeros((capacity, dim))
        self.xT = np.zeros((capacity, dim))
        self.filled = False

    def refresh(self, x0: np.ndarray, xT: np.ndarray):
        if x0.shape != (self.capacity, self.x0.shape[1]):
            raise ConfigError(f"buffer refresh expects {self.x0.shape}, got {x0.shape}")
        self.x0 = np.array(x0, dtype=np.float64)
        self.xT = np.array(xT, dtype=np.float64)
        self.filled = True

    def sample(self, batch: int, rng: np.random.Generator):
        if not self.filled:
            raise ConfigError("buffer sampled before first refresh")
        idx = rng.integers(0, self.capacity, size=batch)
        return self.x0[idx], self.xT[idx]


def simulate_forward(field: Optional[Callable], prior, s: NoiseSchedule,
                     n_steps: int, batch: int, rng: np.random.Generator,
                     record_path: bool = False, t_cut: float = DEFAULT_T_CUT):
    """Euler-Maruyama rollout of dX = b dt + σ dB on a uniform grid over
    [t_cut, T], starting from a fresh prior draw.

    ``field`` maps (x, t) to the full drift b (σ factor included); None
    means the driftless reference process. Returns (x0, xT) pairs, or the
    whole path with its noise draws when ``record_path``.
    """
    if n_steps < 1:
        raise ConfigError("simulate_forward needs at least one step")
    times = np.linspace(t_cut, s.T, n_steps + 1)
    x = np.asarray(prior.sample(batch, rng), dtype=np.float64)
    x0 = x.copy()
    states = [x.copy()] if record_path else None
    increments = [] if record_path else None
    for k in range(n_steps):
        t_k = times[k]
        dt = times[k + 1] - times[k]
        sig = float(s.sigma(t_k))
        drift = field(x, t_k) if field is not None else 0.0
        eps = rng.standard_normal(x.shape)
        x = x + drift * dt + sig * np.sqrt(dt) * eps
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"simulation diverged at step {k}", step_index=k)
        if record_path:
            states.append(x.copy())
            increments.append(eps)
    if record_path:
        return Trajectory(times=times, states=np.stack(states),
                          increments=np.stack(increments))
    return x0, x


def build_coupling(kind, x0: np.ndarray, xT: np.ndarray, prior,
                   rng: np.random.Generator):
    """Turn simulated endpoint pairs into the configured coupling Π^i.

    Joint kinds keep pairs as they came; the reverse-conditional kind
    keeps X_T and redraws X_0 from the prior; the independent kind
    permutes the two columns with independent shuffles, which preserves
    both marginals exactly while destroying the pairing.
    """
    n = x0.shape[0]
    if isinstance(kind, (cpl.SbJoint, cpl.GeneralAnalytic)):
        return x0, xT
    if isinstance(kind, cpl.AsReverseConditional):
        return np.asarray(prior.sample(n, rng), dtype=np.float64), xT
    if isinstance(kind, cpl.BmsIndependent):
        return x0[rng.permutation(n)], xT[rng.permutation(n)]
    raise UnsupportedCouplingError(f"unknown coupling kind {kind!r}")


def _xi_for(coupling, prior, target, s, cv, x0, xT, xt, t, t_cut):
    if isinstance(coupling, cpl.BmsIndependent):
        return cpl.xi_bms(prior, target, s, cv, x0, xT, xt, t, t_cut=t_cut)
    if isinstance(coupling, cpl.AsReverseConditional):
        return cpl.xi_as(cpl.reference_marginal_T(prior, s), target, s, xT, t)
    if isinstance(coupling, cpl.SbJoint):
        return cpl.xi_sb(coupling.corrector, target, s, xT, t)
    if isinstance(coupling, cpl.GeneralAnalytic):
        return cpl.xi_general(coupling.joint_score_0, coupling.joint_score_T,
                              s, cv, x0, xT, xt, t, t_cut=t_cut)
    raise UnsupportedCouplingError(f"unknown coupling kind {coupling!r}")


def _draw_times(n: int, s: NoiseSchedule, t_cut: float,
                rng: np.random.Generator, stratified: bool):
    if stratified:
        u = (np.arange(n) + rng.uniform(size=n)) / n
        return t_cut + u * (s.T - t_cut)
    return rng.uniform(t_cut, s.T, size=n)


def prepare_matching_batch(u_i: Optional[DriftField], s: NoiseSchedule, cv,
                           coupling, prior, target, x0, xT,
                           rng: np.random.Generator, t_cut: float,
                           stratified: bool = False):
    """Draw (t, X_t), evaluate ξ̂ and û_i, and drop non-finite rows.

    Returns (xt, t, xi_hat, ui_hat, n_skipped). More than 10% non-finite
    targets in one batch is treated as corrupt data rather than noise.
    """
    n = x0.shape[0]
    t = _draw_times(n, s, t_cut, rng, stratified)
    xt = sample_bridge(s, x0, xT, t, rng)
    xi = _xi_for(coupling, prior, target, s, cv, x0, xT, xt, t, t_cut)
    scale = np.sqrt(s.kappa(np.maximum(t, t_cut))) / np.asarray(s.sigma(t))
    xi_hat = scale[:, None] * xi
    keep = np.all(np.isfinite(xi_hat), axis=1)
    n_skipped = int(n - np.count_nonzero(keep))
    if n_skipped > _MAX_SKIP_FRACTION * n:
        raise DataQualityError(
            f"{n_skipped}/{n} non-finite regression targets in one batch")
    xt, t, xi_hat = xt[keep], t[keep], xi_hat[keep]
    if u_i is not None:
        ui_hat = u_i.raw(xt, t)[:, :xi_hat.shape[1]]
    else:
        ui_hat = np.zeros_like(xi_hat)
    return xt, t, xi_hat, ui_hat, n_skipped


def matching_loss_spec(xi_hat: np.ndarray, ui_hat: np.ndarray, eta: float):
    """Loss-and-gradient closure over raw network outputs û."""
    n = xi_hat.shape[0]

    def spec(outputs):
        r1 = outputs - xi_hat
        if eta == 0.0:
            return 0.5 * np.sum(r1 * r1) / n, r1 / n
        r2 = outputs - ui_hat
        loss = (0.5 * np.sum(r1 * r1) + 0.5 * eta * np.sum(r2 * r2)) / n
        grad = (r1 + eta * r2) / n
        return loss, grad

    return spec


def matching_loss(field: DriftField, u_i: Optional[DriftField],
                  s: NoiseSchedule, cv, coupling, prior, target,
                  x0, xT, rng: np.random.Generator, eta: float,
                  t_cut: float = DEFAULT_T_CUT) -> float:
    """One Monte-Carlo evaluation of the damped matching loss."""
    xt, t, xi_hat, ui_hat, _ = prepare_matching_batch(
        u_i, s, cv, coupling, prior, target, x0, xT, rng, t_cut)
    loss, _ = field.loss_and_gradient(matching_loss_spec(xi_hat, ui_hat, eta), xt, t)
    return loss


class RunLog:
    """Per-outer-step records plus a JSON-able summary."""

    def __init__(self):
        self.rows: List[dict] = []

    def append(self, **row):
        self.rows.append(row)

    def to_csv(self, path):
        cols = ["outer_step", "loss", "grad_norm", "wall_ms"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.rows:
                fh.write(",".join(repr(row.get(c, "")) for c in cols) + "\n")

    def summary(self) -> dict:
        out = {"outer_steps": len(self.rows)}
        if self.rows:
            out["final_loss"] = self.rows[-1]["loss"]
            out["total_wall_ms"] = sum(r["wall_ms"] for r in self.rows)
        return out


@dataclasses.dataclass
class TrainerState:
    config: TrainConfig
    field: DriftField
    opt: OptimizerState
    buffer: ReplayBuffer
    rng: np.random.Generator
    log: RunLog
    outer_index: int = 0
    skipped_targets: int = 0


def init_state(config: TrainConfig) -> TrainerState:
    field = DriftField(config.schedule, dim=config.target.dim,
                       hidden=config.hidden, blocks=config.blocks,
                       n_freq=config.n_freq, activation=config.activation,
                       t_cut=config.t_cut, seed=config.seed)
    opt = OptimizerState(field.n_params, lr=config.lr, clip=config.clip,
                         weight_decay=config.weight_decay)
    return TrainerState(config=config, field=field, opt=opt,
                        buffer=ReplayBuffer(config.buffer_size, config.target.dim),
                        rng=np.random.default_rng(config.seed),
                        log=RunLog())


def outer_step(state: TrainerState) -> TrainerState:
    """One iteration of the damped fixed-point loop (mutates state)."""
    cfg = state.config
    started = time.perf_counter()
    u_i = state.field.snapshot()

    x0, xT = simulate_forward(u_i, cfg.prior, cfg.schedule, cfg.em_steps,
                              cfg.buffer_size, state.rng, t_cut=cfg.t_cut)
    x0, xT = build_coupling(cfg.coupling, x0, xT, cfg.prior, state.rng)
    if cfg.reuse_fraction > 0.0 and state.buffer.filled:
        n_keep = int(cfg.reuse_fraction * cfg.buffer_size)
        if n_keep > 0:
            keep = state.rng.integers(0, cfg.buffer_size, size=n_keep)
            x0[:n_keep], xT[:n_keep] = state.buffer.x0[keep], state.buffer.xT[keep]
    state.buffer.refresh(x0, xT)

    losses = []
    grad_norm = 0.0
    for _ in range(cfg.grad_steps):
        b0, bT = state.buffer.sample(cfg.batch_size, state.rng)
        # at eta=0 the damping targets multiply out of loss and gradient,
        # so skip the extra u_i forward pass entirely
        xt, t, xi_hat, ui_hat, skipped = prepare_matching_batch(
            u_i if cfg.eta > 0.0 else None, cfg.schedule, cfg.cv,
            cfg.coupling, cfg.prior, cfg.target,
            b0, bT, state.rng, cfg.t_cut, stratified=cfg.stratified_t)
        state.skipped_targets += skipped
        loss, grad = state.field.loss_and_gradient(
            matching_loss_spec(xi_hat, ui_hat, cfg.eta), xt, t)
        state.field.params = optimizer_step(state.opt, state.field.params, grad)
        losses.append(loss)
        grad_norm = float(np.linalg.norm(grad))

    wall_ms = (time.perf_counter() - started) * 1e3
    state.log.append(outer_step=state.outer_index,
                     loss=float(np.mean(losses)) if losses else float("nan"),
                     grad_norm=grad_norm, wall_ms=wall_ms)
    state.outer_index += 1
    return state


def _checkpoint_path(cfg: TrainConfig, outer_index: int) -> str:
    return f"{cfg.checkpoint_dir}/ckpt_{outer_index:05d}.dmck"


def save_train_checkpoint(state: TrainerState, path, meta=None):
    """Full training snapshot: parameters, optimizer moments, RNG state.

    `meta` is an optional JSON-serializable dict stored verbatim in the
    header; the CLI uses it to embed prior/target configs so a checkpoint
    can be sampled without the original config file.
    """
    cfg = state.config
    extra_header = {
        "outer_index": state.outer_index,
        "rng_state": state.rng.bit_generator.state,
        "adam": {"step": state.opt.step, "lr": state.opt.lr,
                 "beta1": state.opt.beta1, "beta2": state.opt.beta2,
                 "eps": state.opt.eps, "weight_decay": state.opt.weight_decay,
                 "clip": state.opt.clip},
        "train": {"em_steps": cfg.em_steps, "t_cut": cfg.t_cut,
                  "eta": cfg.eta, "seed": cfg.seed},
    }
    if meta is not None:
        extra_header["meta"] = meta
    save_checkpoint(path, state.field, extra_header=extra_header,
                    extra_arrays={"adam_m": state.opt.m, "adam_v": state.opt.v})


def load_train_checkpoint(path, config: TrainConfig) -> TrainerState:
    field, header, arrays = load_checkpoint(path, schedule=config.schedule)
    extra = header["extra"]
    opt = OptimizerState(field.n_params, **{k: extra["adam"][k] for k in
                                            ("lr", "beta1", "beta2", "eps",
                                             "weight_decay", "clip")})
    opt.step = extra["adam"]["step"]
    opt.m = arrays["adam_m"].copy()
    opt.v = arrays["adam_v"].copy()
    rng = np.random.default_rng()
    rng.bit_generator.state = extra["rng_state"]
    state = TrainerState(config=config, field=field, opt=opt,
                         buffer=ReplayBuffer(config.buffer_size, config.target.dim),
                         rng=rng, log=RunLog(),
                         outer_index=extra["outer_index"])
    return state


def train(config: TrainConfig, resume_from=None):
    """Run the full loop; returns (field, log).

    Checkpoints land in ``config.checkpoint_dir`` every
    ``checkpoint_interval`` outer steps (0 disables them); a divergence
    propagates after the last written checkpoint, which stays on disk.
    Resuming from an outer-boundary checkpoint reproduces the uninterrupted
    run exactly, because the buffer is rebuilt from scratch at the top of
    every outer step and the RNG state is part of the snapshot.
    """
    state = (load_train_checkpoint(resume_from, config) if resume_from
             else init_state(config))
    interval = config.checkpoint_interval
    while state.outer_index < config.outer_steps:
        outer_step(state)
        if interval and config.checkpoint_dir and state.outer_index % interval == 0:
            save_train_checkpoint(state, _checkpoint_path(config, state.outer_index))
    return state.field, state.log


def train_likelihood_heads(config: TrainConfig, u_field: DriftField,
                           grad_steps: Optional[int] = None,
                           probe: Optional[np.ndarray] = None):
    """Fit backward-drift and score fields against the trained u.

    Both heads regress on the same buffer construction as the main loop:
    v on ξ^v = σ²·(x0−xt)/κ(t), whose projection is the full backward
    drift (the reverse SDE reads dX = −b_v dτ + σ dB̄ in reversed time),
    and s on σ·[a0·∇log Π*_0 + aT·∇log Π*_T], whose projection is the
    scaled score σ(t)·∇log Π*_t that the likelihood ODE consumes.
    The boundary targets need per-marginal scores, so only the independent
    and analytic couplings support the score head. Returns
    (v_field, s_field, log); the log tracks the duality residual
    ‖(u+v) − σ·s‖ RMS on a probe batch when one is supplied (forward plus
    backward drift equals σ²·∇log Π*_t when all three are exact).
    """
    cfg = config
    if not isinstance(cfg.coupling, (cpl.BmsIndependent, cpl.GeneralAnalytic)):
        raise UnsupportedCouplingError(
            "score-head targets need per-marginal boundary scores")
    rng = np.random.default_rng(cfg.seed + 1)
    steps = cfg.grad_steps if grad_steps is None else grad_steps

    v_field = DriftField(cfg.schedule, dim=cfg.target.dim, hidden=cfg.hidden,
                         blocks=cfg.blocks, n_freq=cfg.n_freq,
                         activation=cfg.activation, t_cut=cfg.t_cut,
                         seed=cfg.seed + 11)
    s_field = DriftField(cfg.schedule, dim=cfg.target.dim, hidden=cfg.hidden,
                         blocks=cfg.blocks, n_freq=cfg.n_freq,
                         activation=cfg.activation, t_cut=cfg.t_cut,
                         seed=cfg.seed + 12)
    opt_v = OptimizerState(v_field.n_params, lr=cfg.lr, clip=cfg.clip)
    opt_s = OptimizerState(s_field.n_params, lr=cfg.lr, clip=cfg.clip)

    x0, xT = simulate_forward(u_field, cfg.prior, cfg.schedule, cfg.em_steps,
                              cfg.buffer_size, rng, t_cut=cfg.t_cut)
    x0, xT = build_coupling(cfg.coupling, x0, xT, cfg.prior, rng)
    buffer = ReplayBuffer(cfg.buffer_size, cfg.target.dim)
    buffer.refresh(x0, xT)

    if isinstance(cfg.coupling, cpl.GeneralAnalytic):
        js0, jsT = cfg.coupling.joint_score_0, cfg.coupling.joint_score_T
    else:
        js0, jsT = cpl.independent_joint_scores(cfg.prior, cfg.target)

    log = RunLog()
    for step in range(steps):
        # Unlike the fixed-point loop, the heads regress on a buffer that
        # never moves, so a cosine-annealed step size is the right tool:
        # it takes Adam from exploration to a settled minimizer.
        frac = step / max(1, steps)
        cur_lr = cfg.lr * (0.1 + 0.45 * (1.0 + np.cos(np.pi * frac)))
        opt_v.lr = cur_lr
        opt_s.lr = cur_lr
        b0, bT = buffer.sample(cfg.batch_size, rng)
        t = _draw_times(cfg.batch_size, cfg.schedule, cfg.t_cut, rng,
                        cfg.stratified_t)
        xt = sample_bridge(cfg.schedule, b0, bT, t, rng)
        sig = np.asarray(cfg.schedule.sigma(t))[:, None]
        k_eff = np.asarray(cfg.schedule.kappa(np.maximum(t, cfg.t_cut)))[:, None]
        scale = np.sqrt(k_eff) / sig

        a0, aT = cfg.cv.coefficients(cfg.schedule, t)
        xi_v_hat = scale * (sig * sig * (b0 - xt) / k_eff)
        xi_s_hat = scale * (sig * (a0[:, None] * js0(b0, bT)
                                   + aT[:, None] * jsT(b0, bT)))
        loss_v, grad_v = v_field.loss_and_gradient(
            matching_loss_spec(xi_v_hat, np.zeros_like(xi_v_hat), 0.0), xt, t)
        v_field.params = optimizer_step(opt_v, v_field.params, grad_v)
        loss_s, grad_s = s_field.loss_and_gradient(
            matching_loss_spec(xi_s_hat, np.zeros_like(xi_s_hat), 0.0), xt, t)
        s_field.params = optimizer_step(opt_s, s_field.params, grad_s)

        if probe is not None and (step + 1) % max(1, steps // 10) == 0:
            t_probe = np.full(probe.shape[0], 0.5 * cfg.schedule.T)
            sig_probe = float(cfg.schedule.sigma(0.5 * cfg.schedule.T))
            resid = (u_field.evaluate(probe, t_probe)
                     + v_field.evaluate(probe, t_probe)
                     - sig_probe * s_field.evaluate(probe, t_probe))
            log.append(outer_step=step, loss=float(loss_v + loss_s),
                       grad_norm=0.0, wall_ms=0.0,
                       nelson_rms=float(np.sqrt(np.mean(resid ** 2))))
    return v_field, s_field, log
