"""Integrate-and-fire neurons with soft reset, binary and multi-level.

Two implementations live here on purpose:

* ``if_step`` / ``ml_step`` are plain numpy reference dynamics with no graph.
* :class:`MultiLevelNeuron` runs the same arithmetic on autograd tensors so
  the spike nonlinearity can be trained with a surrogate or a
  straight-through backward rule.

Both use float32 and the same operation order, so their forward values are
bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import DTYPE, Tensor
from .errors import ConfigError, NumericalError

BACKWARD_KINDS = ("surrogate", "ste")
SURROGATE_MODES = ("micro", "fused")
CHARGE_MODES = ("repeat", "direct")


def surrogate_derivative(u, alpha: float = 5.0):
    """Derivative of the scaled sigmoid, alpha * s * (1 - s) with s = sigmoid(alpha * u).

    Written in terms of exp(-alpha*|u|) so it is exactly even in u and never
    overflows.
    """
    if alpha <= 0:
        raise ConfigError(f"surrogate alpha must be positive, got {alpha}")
    u = np.asarray(u, dtype=np.float64)
    e = np.exp(-alpha * np.abs(u))
    out = alpha * e / (1.0 + e) ** 2
    return float(out) if out.ndim == 0 else out


def ste_derivative(u):
    """Straight-through derivative: 1 everywhere."""
    u = np.asarray(u, dtype=np.float64)
    return 1.0 if u.ndim == 0 else np.ones_like(u)


def quantizer_oracle(x: float, N: int, T: int, v_th: float = 1.0) -> float:
    """Decoded output of an N-level soft-reset IF neuron driven by constant x for T steps."""
    if N < 1 or T < 1 or v_th <= 0:
        raise ConfigError("quantizer_oracle needs N >= 1, T >= 1 and v_th > 0")
    levels = N * T
    q = np.floor(levels * np.asarray(x, dtype=np.float64) / v_th)
    out = np.clip(q, 0, levels) / levels
    return float(out) if out.ndim == 0 else out


@dataclass
class IFState:
    """Membrane potential per neuron and the shared firing threshold."""

    V: np.ndarray
    v_th: float = 1.0

    @classmethod
    def zeros(cls, shape, v_th: float = 1.0) -> "IFState":
        if v_th <= 0:
            raise ConfigError(f"v_th must be positive, got {v_th}")
        return cls(np.zeros(shape, dtype=DTYPE), v_th)


def _check_current(state: IFState, current) -> np.ndarray:
    i = np.asarray(current, dtype=DTYPE)
    if i.shape != state.V.shape:
        raise ConfigError(f"input current shape {i.shape} != membrane shape {state.V.shape}")
    if not np.isfinite(i).all():
        raise NumericalError("non-finite input current")
    return i


def if_step(state: IFState, current) -> np.ndarray:
    """One timestep of the binary IF neuron. Fires on equality with the threshold."""
    i = _check_current(state, current)
    v_th = DTYPE(state.v_th)
    h = state.V + i
    z = (h - v_th >= 0).astype(DTYPE)
    state.V = h * (1 - z) + (h - v_th) * z
    return z


def ml_step(state: IFState, current, N: int) -> np.ndarray:
    """One timestep of the N-level neuron: charge N times, then discharge N times.

    Returns the integer-valued spike z in [0, N] as float32.
    """
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    i = _check_current(state, current)
    v_th = DTYPE(state.v_th)
    v = state.V + DTYPE(N) * i
    z = np.zeros_like(v)
    for _ in range(N):
        g = (v - v_th >= 0).astype(DTYPE)
        v = v - g * v_th
        z = z + g
    state.V = v
    return z


@dataclass
class MLNeuronConfig:
    """Parameters of a multi-level neuron layer.

    ``charge="direct"`` integrates the input once instead of N times; it is
    used for barrier neurons that receive unweighted spike sums.
    """

    N: int = 1
    v_th: float = 1.0
    backward: str = "surrogate"
    alpha: float = 5.0
    surrogate_mode: str = "micro"
    charge: str = "repeat"
    detach_reset: bool = False

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be a positive integer, got {self.N}")
        self.N = int(self.N)
        if self.v_th <= 0:
            raise ConfigError(f"v_th must be positive, got {self.v_th}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.backward not in BACKWARD_KINDS:
            raise ConfigError(f"backward must be one of {BACKWARD_KINDS}, got {self.backward!r}")
        if self.surrogate_mode not in SURROGATE_MODES:
            raise ConfigError(f"surrogate_mode must be one of {SURROGATE_MODES}")
        if self.charge not in CHARGE_MODES:
            raise ConfigError(f"charge must be one of {CHARGE_MODES}")

    @property
    def gain(self) -> int:
        return self.N if self.charge == "repeat" else 1

    def local_derivative(self, u):
        if self.backward == "ste":
            return ste_derivative(u)
        return surrogate_derivative(u, self.alpha)


def _heaviside_fwd(ctx, v, cfg):
    ctx.u = v.astype(np.float64) - np.float64(DTYPE(cfg.v_th))
    ctx.cfg = cfg
    return (v - DTYPE(cfg.v_th) >= 0).astype(DTYPE)


def _heaviside_bwd(ctx, g):
    if ctx.cfg.backward == "ste":
        return (g,)
    return (g * ctx.cfg.local_derivative(ctx.u).astype(DTYPE),)


heaviside = ag.register_custom_backward(_heaviside_fwd, _heaviside_bwd, "heaviside")


def _discharge(h, cfg):
    v_th = DTYPE(cfg.v_th)
    v, z = h, np.zeros_like(h)
    for _ in range(cfg.N):
        g = (v - v_th >= 0).astype(DTYPE)
        v = v - g * v_th
        z = z + g
    return z, v


def _fused_spike_fwd(ctx, h, cfg):
    ctx.u = h.astype(np.float64) - np.float64(DTYPE(cfg.v_th))
    ctx.cfg = cfg
    return _discharge(h, cfg)[0]


def _fused_spike_bwd(ctx, g):
    if ctx.cfg.backward == "ste":
        return (g,)
    return (g * ctx.cfg.local_derivative(ctx.u).astype(DTYPE),)


def _fused_residual_fwd(ctx, h, cfg):
    ctx.u = h.astype(np.float64) - np.float64(DTYPE(cfg.v_th))
    ctx.cfg = cfg
    return _discharge(h, cfg)[1]


def _fused_residual_bwd(ctx, g):
    d = np.asarray(ctx.cfg.local_derivative(ctx.u), dtype=np.float64)
    return (g * (1.0 - ctx.cfg.v_th * d).astype(DTYPE),)


fused_spike = ag.register_custom_backward(_fused_spike_fwd, _fused_spike_bwd, "fused_spike")
fused_residual = ag.register_custom_backward(_fused_residual_fwd, _fused_residual_bwd, "fused_residual")


class MultiLevelNeuron:
    """Taped multi-level IF layer over a (T, ...) current sequence.

    In ``micro`` mode every micro-timestep Heaviside is its own graph node with
    the configured backward rule. In ``fused`` mode the whole discharge of a
    timestep is one node whose derivative is evaluated at the post-charge
    potential minus the threshold.
    """

    def __init__(self, config: Optional[MLNeuronConfig] = None, name: str = "neuron"):
        self.config = config or MLNeuronConfig()
        self.name = name
        self.record_micro = False
        self.micro_nodes: list[Tensor] = []
        self.final_v: Optional[np.ndarray] = None

    def __call__(self, currents: Tensor) -> Tensor:
        return self.forward(currents)

    def _timestep(self, v: Tensor, current: Tensor):
        cfg = self.config
        h = v + (current * float(cfg.gain) if cfg.gain != 1 else current)
        if cfg.surrogate_mode == "fused":
            z = fused_spike(h, cfg=cfg)
            if cfg.detach_reset:
                v_next = Tensor(_discharge(h.data, cfg)[1])
            else:
                v_next = fused_residual(h, cfg=cfg)
            return z, v_next
        z = None
        for _ in range(cfg.N):
            g = heaviside(h, cfg=cfg)
            if self.record_micro:
                self.micro_nodes.append(g)
            reset = Tensor(g.data * DTYPE(cfg.v_th)) if cfg.detach_reset else g * float(cfg.v_th)
            h = h - reset
            z = g if z is None else z + g
        return z, h

    def forward(self, currents: Tensor) -> Tensor:
        currents = ag.as_tensor(currents)
        if currents.ndim < 1:
            raise ConfigError("neuron input needs a leading time axis")
        T = currents.shape[0]
        self.micro_nodes = []
        if T == 0:
            return Tensor(np.zeros(currents.shape, dtype=DTYPE))
        v = Tensor(np.zeros(currents.shape[1:], dtype=DTYPE))
        outs = []
        for t in range(T):
            z, v = self._timestep(v, currents[t])
            outs.append(z)
        self.final_v = v.data
        return ag.stack(outs)


@dataclass
class SpikeTensor:
    """Integer-valued spikes of shape (T, ...) produced under level bound N."""

    data: Tensor
    N: int

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def values(self) -> np.ndarray:
        return np.rint(self.data.data).astype(np.int64)

    def __post_init__(self):
        vals = self.data.data
        if vals.size and (vals.min() < 0 or vals.max() > self.N or not np.array_equal(vals, np.rint(vals))):
            raise ConfigError(f"spike values must be integers in [0, {self.N}]")


def ml_forward_sequence(config: MLNeuronConfig, input_currents, neuron: Optional[MultiLevelNeuron] = None) -> SpikeTensor:
    """Run a fresh (V = 0) neuron over a (T, ...) current sequence on the tape."""
    neuron = neuron or MultiLevelNeuron(config)
    out = neuron.forward(ag.as_tensor(input_currents))
    return SpikeTensor(out, config.N)
