"""Drift-field approximator: a residual MLP with hand-written reverse mode.

The network lives on one flat float64 parameter vector (views per layer),
which keeps snapshots, checkpoints, and the optimizer trivial. Architecture:

    z = [x ‖ fourier_embed(t)]
    h ← W_in z + b_in
    h ← h + act(W_k h + b_k)        (k = 1..blocks, pre-activation residual)
    û ← W_out h + b_out             (W_out, b_out zero at init, so û ≡ 0)

The raw output û is the noise-prediction reparameterization of the drift:
the field's ``evaluate`` returns the full drift

    b(x, t) = σ(t)/√κ(max(t, t_cut)) · û(x, t)

so regression targets stay O(1) in t while the exposed drift carries the
reference scaling. A zero-initialized field therefore evaluates to the zero
drift everywhere, which makes the first simulation pass a pure reference
rollout.
"""

from __future__ import annotations

import json
import struct
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DivergenceError, PoisonedStateError
from .schedules import NoiseSchedule, schedule_from_config

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_GELU_CUBIC = 0.044715

CHECKPOINT_MAGIC = b"DMCHKPT1"
DEFAULT_T_CUT = 1e-3


def _gelu(x):
    # tanh approximation, written with in-place ops: np.tanh dominates the
    # training-loop profile, so avoid extra temporaries around it
    inner = x * x
    inner *= _GELU_CUBIC * x
    inner += x
    inner *= _SQRT_2_OVER_PI
    np.tanh(inner, out=inner)
    inner += 1.0
    inner *= x
    inner *= 0.5
    return inner


def _gelu_prime(x):
    inner = _SQRT_2_OVER_PI * (x + _GELU_CUBIC * x ** 3)
    th = np.tanh(inner)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _SQRT_2_OVER_PI * (
        1.0 + 3.0 * _GELU_CUBIC * x ** 2)


def _tanh_prime(x):
    th = np.tanh(x)
    return 1.0 - th * th


_ACTIVATIONS = {
    "gelu": (_gelu, _gelu_prime),
    "tanh": (np.tanh, _tanh_prime),
}


def fourier_embed(t, n_freq: int, T: float = 1.0) -> np.ndarray:
    """[sin(2πk t/T), cos(2πk t/T)] for k = 1..n_freq.

    Returns (2·n_freq,) for scalar t, (n, 2·n_freq) for a batch. The norm
    is exactly √n_freq at every t.
    """
    t = np.asarray(t, dtype=np.float64)
    single = t.ndim == 0
    t = np.atleast_1d(t)
    k = np.arange(1, n_freq + 1, dtype=np.float64)
    phase = 2.0 * np.pi * t[:, None] * k[None, :] / T
    out = np.concatenate([np.sin(phase), np.cos(phase)], axis=1)
    return out[0] if single else out


class _MlpCore:
    """Flat-parameter residual MLP with explicit forward/backward passes."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int, blocks: int,
                 activation: str, seed: int):
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation '{activation}' "
                              f"(have {sorted(_ACTIVATIONS)})")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = hidden
        self.blocks = blocks
        self.activation = activation
        self._act, self._act_prime = _ACTIVATIONS[activation]

        layout = [("w_in", (hidden, in_dim)), ("b_in", (hidden,))]
        for k in range(blocks):
            layout += [(f"w{k}", (hidden, hidden)), (f"b{k}", (hidden,))]
        layout += [("w_out", (out_dim, hidden)), ("b_out", (out_dim,))]
        self._layout = layout
        self._slices = {}
        off = 0
        for name, shape in layout:
            size = int(np.prod(shape))
            self._slices[name] = (off, off + size, shape)
            off += size
        self.n_params = off
        self.params = self._init_params(seed)

    def _init_params(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        params = np.zeros(self.n_params, dtype=np.float64)
        for name, shape in self._layout:
            if name in ("w_out", "b_out"):
                continue  # zero init: the head stays silent until trained
            lo, hi, shp = self._slices[name]
            fan_in = shp[1] if len(shp) == 2 else shp[0]
            bound = 1.0 / np.sqrt(fan_in)
            params[lo:hi] = rng.uniform(-bound, bound, size=hi - lo)
        return params

    def view(self, params: np.ndarray, name: str) -> np.ndarray:
        lo, hi, shape = self._slices[name]
        return params[lo:hi].reshape(shape)

    def forward(self, params: np.ndarray, z: np.ndarray, want_cache: bool = False):
        h = z @ self.view(params, "w_in").T + self.view(params, "b_in")
        hs, pres = [h], []
        for k in range(self.blocks):
            pre = h @ self.view(params, f"w{k}").T + self.view(params, f"b{k}")
            h = h + self._act(pre)
            if want_cache:
                pres.append(pre)
                hs.append(h)
        y = h @ self.view(params, "w_out").T + self.view(params, "b_out")
        if not want_cache:
            return y
        return y, (z, hs, pres)

    def backward(self, params: np.ndarray, cache, d_y: np.ndarray) -> np.ndarray:
        """Parameter gradient for the cached forward pass, given ∂loss/∂y."""
        z, hs, pres = cache
        grad = np.zeros(self.n_params, dtype=np.float64)
        gv = lambda name: self.view(grad, name)

        gv("w_out")[:] = d_y.T @ hs[-1]
        gv("b_out")[:] = np.sum(d_y, axis=0)
        d_h = d_y @ self.view(params, "w_out")
        for k in range(self.blocks - 1, -1, -1):
            d_a = self._act_prime(pres[k]) * d_h
            gv(f"w{k}")[:] = d_a.T @ hs[k]
            gv(f"b{k}")[:] = np.sum(d_a, axis=0)
            d_h = d_h + d_a @ self.view(params, f"w{k}")
        gv("w_in")[:] = d_h.T @ z
        gv("b_in")[:] = np.sum(d_h, axis=0)
        return grad

    def backward_input(self, params: np.ndarray, cache, d_y: np.ndarray) -> np.ndarray:
        """∂(d_y · y)/∂z only — skips the parameter-gradient GEMMs."""
        _, _, pres = cache
        d_h = d_y @ self.view(params, "w_out")
        for k in range(self.blocks - 1, -1, -1):
            d_a = self._act_prime(pres[k]) * d_h
            d_h = d_h + d_a @ self.view(params, f"w{k}")
        return d_h @ self.view(params, "w_in")


class DriftField:
    """Parametric full drift b_θ(x, t) over a fixed noise schedule.

    ``heads`` > 1 stacks extra raw outputs after the drift head (a backward
    drift and a score head share the trunk when enabled); all heads receive
    the same σ/√κ scaling on evaluation.
    """

    def __init__(self, schedule: NoiseSchedule, dim: int, hidden: int = 512,
                 blocks: int = 6, n_freq: int = 64, activation: str = "gelu",
                 heads: int = 1, t_cut: float = DEFAULT_T_CUT, seed: int = 0):
        if dim < 1 or hidden < 1 or blocks < 0 or n_freq < 1 or heads < 1:
            raise ConfigError("drift field sizes must be positive")
        self.schedule = schedule
        self.dim = dim
        self.n_freq = n_freq
        self.heads = heads
        self.t_cut = float(t_cut)
        self.seed = int(seed)
        self.frozen = False
        self._last_finite_loss: Optional[float] = None
        self._core = _MlpCore(in_dim=dim + 2 * n_freq, out_dim=heads * dim,
                              hidden=hidden, blocks=blocks,
                              activation=activation, seed=seed)

    # -- plumbing ----------------------------------------------------------

    @property
    def params(self) -> np.ndarray:
        return self._core.params

    @params.setter
    def params(self, value: np.ndarray):
        if self.frozen:
            raise PoisonedStateError("attempted to update a frozen snapshot")
        self._core.params = np.asarray(value, dtype=np.float64)

    @property
    def n_params(self) -> int:
        return self._core.n_params

    def architecture(self) -> dict:
        core = self._core
        return {"dim": self.dim, "hidden": core.hidden, "blocks": core.blocks,
                "n_freq": self.n_freq, "activation": core.activation,
                "heads": self.heads, "t_cut": self.t_cut, "seed": self.seed}

    def _inputs(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        emb = fourier_embed(t_arr, self.n_freq, self.schedule.T)
        return np.concatenate([x, emb], axis=1), t_arr, single

    def _check_poisoned(self):
        if not np.all(np.isfinite(self._core.params)):
            raise PoisonedStateError("drift field parameters contain NaN/Inf")

    def _scaling(self, t_arr: np.ndarray) -> np.ndarray:
        """σ(t)/√κ_eff with κ frozen below the time cutoff."""
        t_eff = np.maximum(t_arr, self.t_cut)
        sig = np.asarray(self.schedule.sigma(t_arr), dtype=np.float64)
        kap = np.asarray(self.schedule.kappa(t_eff), dtype=np.float64)
        return (sig / np.sqrt(kap))[:, None]

    # -- evaluation --------------------------------------------------------

    def raw(self, x, t) -> np.ndarray:
        """Unscaled network output û, all heads concatenated."""
        self._check_poisoned()
        z, _, single = self._inputs(x, t)
        y = self._core.forward(self._core.params, z)
        return y[0] if single else y

    def evaluate(self, x, t, head: int = 0) -> np.ndarray:
        """Full drift b(x, t) = σ/√κ_eff · û for the requested head."""
        self._check_poisoned()
        z, t_arr, single = self._inputs(x, t)
        y = self._core.forward(self._core.params, z)
        y = y[:, head * self.dim:(head + 1) * self.dim]
        out = self._scaling(t_arr) * y
        return out[0] if single else out

    def __call__(self, x, t):
        return self.evaluate(x, t)

    def divergence(self, x, t, head: int = 0):
        """∇_x · b(·, t) at each row of x, by reverse mode (d passes)."""
        self._check_poisoned()
        z, t_arr, single = self._inputs(x, t)
        y, cache = self._core.forward(self._core.params, z, want_cache=True)
        div = np.zeros(z.shape[0])
        for i in range(self.dim):
            d_y = np.zeros_like(y)
            d_y[:, head * self.dim + i] = 1.0
            dz = self._core.backward_input(self._core.params, cache, d_y)
            div += dz[:, i]
        out = self._scaling(t_arr)[:, 0] * div
        return float(out[0]) if single else out

    # -- training ----------------------------------------------------------

    def loss_and_gradient(self, loss_spec: Callable, x, t):
        """(loss, ∂loss/∂θ) for a batch, via reverse mode through the trunk.

        ``loss_spec`` maps the raw network outputs (n, heads·dim) to a
        scalar loss and its gradient with respect to those outputs. A
        non-finite loss raises a divergence error carrying the last finite
        loss seen by this field.
        """
        z, _, _ = self._inputs(x, t)
        y, cache = self._core.forward(self._core.params, z, want_cache=True)
        loss, d_y = loss_spec(y)
        loss = float(loss)
        if not np.isfinite(loss):
            raise DivergenceError("loss is not finite",
                                  last_loss=self._last_finite_loss)
        self._last_finite_loss = loss
        grad = self._core.backward(self._core.params, cache, np.asarray(d_y, dtype=np.float64))
        return loss, grad

    def snapshot(self) -> "DriftField":
        """Detached frozen copy: shares nothing, refuses parameter updates."""
        twin = DriftField.__new__(DriftField)
        twin.__dict__.update(self.__dict__)
        twin._core = _MlpCore(self._core.in_dim, self._core.out_dim,
                              self._core.hidden, self._core.blocks,
                              self._core.activation, seed=0)
        twin._core.params = self._core.params.copy()
        twin._core.params.setflags(write=False)
        twin.frozen = True
        return twin


class PhiNet:
    """Tiny scalar network over the time embedding (learned control variate).

    Zero output head at init, so a fresh net leaves the control variate at
    its default c = γ exactly.
    """

    def __init__(self, schedule: NoiseSchedule, hidden: int = 64, blocks: int = 2,
                 n_freq: int = 16, activation: str = "gelu", seed: int = 0):
        self.schedule = schedule
        self.n_freq = n_freq
        self._core = _MlpCore(in_dim=2 * n_freq, out_dim=1, hidden=hidden,
                              blocks=blocks, activation=activation, seed=seed)

    @property
    def params(self) -> np.ndarray:
        return self._core.params

    @params.setter
    def params(self, value: np.ndarray):
        self._core.params = np.asarray(value, dtype=np.float64)

    def value(self, t):
        """NN^φ(t); scalar for scalar t, (n,) for a batch."""
        t = np.asarray(t, dtype=np.float64)
        single = t.ndim == 0
        emb = fourier_embed(np.atleast_1d(t), self.n_freq, self.schedule.T)
        y = self._core.forward(self._core.params, emb)[:, 0]
        return float(y[0]) if single else y

    def loss_and_gradient(self, loss_spec: Callable, t):
        emb = fourier_embed(np.atleast_1d(np.asarray(t, dtype=np.float64)),
                            self.n_freq, self.schedule.T)
        y, cache = self._core.forward(self._core.params, emb, want_cache=True)
        loss, d_y = loss_spec(y)
        loss = float(loss)
        if not np.isfinite(loss):
            raise DivergenceError("loss is not finite")
        return loss, self._core.backward(self._core.params, cache,
                                         np.asarray(d_y, dtype=np.float64))


# ---------------------------------------------------------------------------
# optimizer


class OptimizerState:
    """AdamW with element-wise gradient value clipping."""

    def __init__(self, n_params: int, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0, clip: float = 1.0):
        self.m = np.zeros(n_params, dtype=np.float64)
        self.v = np.zeros(n_params, dtype=np.float64)
        self.step = 0
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.clip = float(clip)


def optimizer_step(state: OptimizerState, params: np.ndarray,
                   grads: np.ndarray) -> np.ndarray:
    """One AdamW update; clips gradient values at ±clip first."""
    g = np.clip(grads, -state.clip, state.clip)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    new = params - state.lr * (m_hat / (np.sqrt(v_hat) + state.eps)
                               + state.weight_decay * params)
    return new


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout: 8-byte magic, 4-byte little-endian header length, UTF-8 JSON
# header, then the named float64 arrays back to back (little-endian), in
# the order listed under header["arrays"]. "params" is always present.


def save_checkpoint(path, field: DriftField, extra_header: Optional[dict] = None,
                    extra_arrays: Optional[dict] = None):
    arrays = {"params": field.params}
    if extra_arrays:
        arrays.update(extra_arrays)
    header = {
        "format": 1,
        "architecture": field.architecture(),
        "schedule": field.schedule.describe(),
        "arrays": [{"name": k, "size": int(np.asarray(v).size)}
                   for k, v in arrays.items()],
    }
    if extra_header:
        header["extra"] = extra_header
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k in arrays:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())


def load_checkpoint(path, schedule: Optional[NoiseSchedule] = None):
    """Returns (field, header, arrays). Rebuilds the schedule from the
    header unless one is passed in."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            raw = fh.read(8 * entry["size"])
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if schedule is None:
        schedule = schedule_from_config(header["schedule"])
    arch = header["architecture"]
    field = DriftField(schedule, dim=arch["dim"], hidden=arch["hidden"],
                       blocks=arch["blocks"], n_freq=arch["n_freq"],
                       activation=arch["activation"], heads=arch["heads"],
                       t_cut=arch["t_cut"], seed=arch["seed"])
    field.params = arrays["params"].copy()
    return field, header, arrays
