"""Spiking layers, residual blocks and model assembly from a JSON-style config.

Activations move between layers as (T*B, ...) tensors: time and batch are
folded together so convolutions and batch norm see every timestep at once,
and neuron layers unfold the time axis to run their dynamics.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import DTYPE, Parameter, Tensor
from .errors import ConfigError
from .fsutil import atomic_directory
from .neuron import MLNeuronConfig, MultiLevelNeuron
from .profiler import LayerStats, SpikeTrace

VARIANTS = ("sew", "sparse", "spiking_resnet")
LAYER_KINDS = ("conv", "linear", "avgpool", "neuron", "batchnorm", "residual_block")
TOPOLOGIES = ("vgg-small", "resnet-small", "vgg16", "resnet18")


@dataclass
class BlockTaps:
    """Direct-path output A, shortcut output R, sum S and block output O."""

    A: Tensor
    R: Tensor
    S: Tensor
    O: Tensor


class RunContext:
    def __init__(self, T: int, batch: int, training: bool, record_taps: bool = False):
        self.T = T
        self.batch = batch
        self.training = training
        self.record_taps = record_taps
        self.stats: list[LayerStats] = []
        # per-timestep (events, weighted events) of the spike flow in the current activation
        self.flow: Optional[tuple[np.ndarray, np.ndarray]] = None


class Layer:
    name = ""

    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict:
        return {}

    def reset(self, rng) -> None:
        pass

    def forward(self, x: Tensor, run: RunContext) -> Tensor:
        raise NotImplementedError


def _kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


class Conv(Layer):
    def __init__(self, in_ch, out_ch, kernel=3, stride=1, padding=0, name="conv"):
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, kernel
        self.stride, self.padding, self.name = stride, padding, name
        self.w = Parameter(np.zeros((out_ch, in_ch, kernel, kernel)), name=f"{name}.w")
        self.b = Parameter(np.zeros(out_ch), name=f"{name}.b")
        self.in_shape = self.out_shape = None

    @property
    def fan_out(self) -> int:
        """Nominal synapses reached by one input event."""
        return self.out_ch * math.ceil(self.kernel / self.stride) ** 2

    def infer(self, shape):
        c, h, w = shape
        if c != self.in_ch:
            raise ConfigError(f"{self.name}: expects {self.in_ch} channels, got {c}")
        ho = ag.conv_output_size(h, self.kernel, self.stride, self.padding)
        wo = ag.conv_output_size(w, self.kernel, self.stride, self.padding)
        self.in_shape, self.out_shape = shape, (self.out_ch, ho, wo)
        return self.out_shape

    def macs(self) -> int:
        return int(np.prod(self.out_shape)) * self.in_ch * self.kernel**2

    def parameters(self):
        return [self.w, self.b]

    def reset(self, rng):
        self.w.data[...] = _kaiming_uniform(rng, self.w.shape, self.in_ch * self.kernel**2)
        self.b.data[...] = 0

    def forward(self, x, run):
        return ag.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class Linear(Layer):
    def __init__(self, fin, fout, name="linear"):
        self.fin, self.fout, self.name = fin, fout, name
        self.w = Parameter(np.zeros((fin, fout)), name=f"{name}.w")
        self.b = Parameter(np.zeros(fout), name=f"{name}.b")
        self.in_shape = self.out_shape = None

    @property
    def fan_out(self) -> int:
        return self.fout

    def infer(self, shape):
        n = int(np.prod(shape))
        if n != self.fin:
            raise ConfigError(f"{self.name}: expects {self.fin} input features, got {n}")
        self.in_shape, self.out_shape = shape, (self.fout,)
        return self.out_shape

    def macs(self) -> int:
        return self.fin * self.fout

    def parameters(self):
        return [self.w, self.b]

    def reset(self, rng):
        self.w.data[...] = _kaiming_uniform(rng, self.w.shape, self.fin)
        self.b.data[...] = 0

    def forward(self, x, run):
        if x.ndim != 2:
            x = x.reshape(x.shape[0], -1)
        return ag.linear(x, self.w, self.b)


class BatchNorm(Layer):
    """Batch norm over batch and time (and space). Eval mode folds it into an affine map."""

    def __init__(self, channels, name="bn", momentum=0.1, eps=1e-5):
        self.channels, self.name, self.momentum, self.eps = channels, name, momentum, eps
        self.gamma = Parameter(np.ones(channels), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels), name=f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)

    def infer(self, shape):
        if shape[0] != self.channels:
            raise ConfigError(f"{self.name}: expects {self.channels} channels, got {shape[0]}")
        return shape

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def reset(self, rng):
        self.gamma.data[...] = 1
        self.beta.data[...] = 0
        self.running_mean[...] = 0
        self.running_var[...] = 1

    def folded(self):
        scale = self.gamma.data / np.sqrt(self.running_var.astype(np.float64) + self.eps)
        shift = self.beta.data - self.running_mean * scale
        return scale.astype(DTYPE), shift.astype(DTYPE)

    def forward(self, x, run):
        if not run.training:
            scale, shift = self.folded()
            return ag.channel_affine(x, Tensor(scale), Tensor(shift))
        out = ag.batchnorm(x, self.gamma, self.beta, eps=self.eps)
        m = out.ctx.count
        unbiased = out.ctx.batch_var * m / max(m - 1, 1)
        self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * out.ctx.batch_mean
        self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        return out


class AvgPool(Layer):
    def __init__(self, kernel=2, stride=None, name="avgpool"):
        self.kernel, self.stride, self.name = kernel, stride or kernel, name

    def infer(self, shape):
        c, h, w = shape
        if self.kernel > h or self.kernel > w:
            raise ConfigError(f"{self.name}: window {self.kernel} larger than input {h}x{w}")
        return (c, (h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1)

    def forward(self, x, run):
        return ag.avgpool2d(x, k=self.kernel, stride=self.stride)


class SpikingLayer(Layer):
    """A neuron layer that also records its per-timestep event counts."""

    def __init__(self, config: MLNeuronConfig, name="neuron", has_bias=True):
        self.neuron = MultiLevelNeuron(config, name)
        self.name = name
        self.has_bias = has_bias
        self.fan_out = 0
        self.neuron_count = 0
        self.shape = None

    @property
    def config(self) -> MLNeuronConfig:
        return self.neuron.config

    def infer(self, shape):
        self.shape = tuple(shape)
        self.neuron_count = int(np.prod(shape))
        return shape

    def forward(self, x, run):
        seq = x.reshape((run.T, run.batch) + x.shape[1:])
        z = self.neuron.forward(seq)
        stats = LayerStats.from_spikes(
            self.name, z.data, kind="neuron", fan_out=self.fan_out,
            neuron_count=self.neuron_count, has_bias=self.has_bias,
        )
        run.stats.append(stats)
        run.flow = (stats.events_per_t, stats.weighted_per_t)
        return z.reshape((run.T * run.batch,) + x.shape[1:])


class _SumPoint:
    """Bookkeeping stand-in for a SEW summation point (not a neuron)."""

    def __init__(self, name):
        self.name = name
        self.fan_out = 0


class ResidualBlock(Layer):
    """conv-BN-neuron-conv-BN-neuron direct path plus a shortcut, summed.

    ``sew`` forwards the sum as is; ``sparse`` and ``spiking_resnet`` put a
    multi-level neuron after the sum (STE or surrogate backward).
    """

    def __init__(self, index, in_ch, out_ch, stride, variant, neuron_cfg, barrier_cfg, use_bn=True):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown residual variant {variant!r}")
        self.index, self.in_ch, self.out_ch, self.stride = index, in_ch, out_ch, stride
        self.variant = variant
        self.name = f"block_{index}"
        self.conv1 = Conv(in_ch, out_ch, 3, stride, 1, name=f"{self.name}.conv1")
        self.bn1 = BatchNorm(out_ch, name=f"{self.name}.bn1") if use_bn else None
        self.n1 = SpikingLayer(neuron_cfg, name=f"{self.name}.n1")
        self.conv2 = Conv(out_ch, out_ch, 3, 1, 1, name=f"{self.name}.conv2")
        self.bn2 = BatchNorm(out_ch, name=f"{self.name}.bn2") if use_bn else None
        self.n2 = SpikingLayer(neuron_cfg, name=self.name)
        self.downsample = stride != 1 or in_ch != out_ch
        if self.downsample:
            self.sc_conv = Conv(in_ch, out_ch, 1, stride, 0, name=f"res_{index}.conv")
            self.sc_bn = BatchNorm(out_ch, name=f"res_{index}.bn") if use_bn else None
            self.sc_n = SpikingLayer(neuron_cfg, name=f"res_{index}")
        if variant == "sew":
            self.post = None
            self.out_emitter = _SumPoint(f"sum_{index}")
        else:
            self.post = SpikingLayer(barrier_cfg, name=f"sum_{index}", has_bias=False)
            self.out_emitter = self.post
        into_sum = 0 if variant == "sew" else 1
        self.n1.fan_out = self.conv2.fan_out
        self.n2.fan_out = into_sum
        if self.downsample:
            self.sc_n.fan_out = into_sum
        self.taps: Optional[BlockTaps] = None

    @property
    def input_fan_out(self) -> int:
        shortcut = self.sc_conv.fan_out if self.downsample else (0 if self.variant == "sew" else 1)
        return self.conv1.fan_out + shortcut

    def _sub_layers(self):
        items = [self.conv1, self.bn1, self.n1, self.conv2, self.bn2, self.n2]
        if self.downsample:
            items += [self.sc_conv, self.sc_bn, self.sc_n]
        if self.post is not None:
            items.append(self.post)
        return [layer for layer in items if layer is not None]

    def infer(self, shape):
        s = shape
        for layer in (self.conv1, self.bn1, self.n1, self.conv2, self.bn2, self.n2):
            if layer is not None:
                s = layer.infer(s)
        if self.downsample:
            r = shape
            for layer in (self.sc_conv, self.sc_bn, self.sc_n):
                if layer is not None:
                    r = layer.infer(r)
            if r != s:
                raise ConfigError(f"{self.name}: shortcut shape {r} != direct path shape {s}")
        elif shape != s:
            raise ConfigError(f"{self.name}: identity shortcut shape {shape} != direct path shape {s}")
        if self.post is not None:
            self.post.infer(s)
        self.out_shape = s
        return s

    def weighted_layers(self):
        return [self.conv1, self.conv2] + ([self.sc_conv] if self.downsample else [])

    def spiking_layers(self):
        return [layer for layer in self._sub_layers() if isinstance(layer, SpikingLayer)]

    def parameters(self):
        return [p for layer in self._sub_layers() for p in layer.parameters()]

    def buffers(self):
        out = {}
        for layer in self._sub_layers():
            out.update(layer.buffers())
        return out

    def reset(self, rng):
        for layer in self._sub_layers():
            layer.reset(rng)

    def forward(self, x, run):
        flow_in = run.flow
        a = x
        for layer in (self.conv1, self.bn1, self.n1, self.conv2, self.bn2, self.n2):
            if layer is not None:
                a = layer.forward(a, run)
        flow_a = run.flow
        if self.downsample:
            r = x
            for layer in (self.sc_conv, self.sc_bn, self.sc_n):
                if layer is not None:
                    r = layer.forward(r, run)
            flow_r = run.flow
        else:
            r = ag.identity(x)
            flow_r = flow_in
        s = a + r
        if self.post is None:
            o = s
            if flow_r is None:
                raise ConfigError(f"{self.name}: identity shortcut needs a spiking input")
            seq = s.data.reshape((run.T, -1))
            hist = np.bincount(np.rint(seq).astype(np.int64).ravel(), minlength=1)
            stats = LayerStats(
                self.out_emitter.name, flow_a[0] + flow_r[0], flow_a[1] + flow_r[1], kind="sum",
                fan_out=self.out_emitter.fan_out, neuron_count=int(np.prod(s.shape[1:])), histogram=hist,
            )
            run.stats.append(stats)
            run.flow = (stats.events_per_t, stats.weighted_per_t)
        else:
            o = self.post.forward(s, run)
        if run.record_taps:
            for t in (a, r, s, o):
                t.retain_grad()
            self.taps = BlockTaps(a, r, s, o)
        return o


class _InputPoint:
    def __init__(self):
        self.name = "input"
        self.fan_out = 0


class Model:
    """An ordered stack of layers ending in a non-firing linear readout."""

    def __init__(self, layers, config, input_shape, num_classes, T, N, variant):
        self.layers = layers
        self.config = config
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.T, self.N, self.variant = T, N, variant
        self.training = True
        self.input_point = _InputPoint()
        self.blocks = [layer for layer in layers if isinstance(layer, ResidualBlock)]

    @property
    def readout(self) -> Linear:
        return self.layers[-1]

    def train(self) -> "Model":
        self.training = True
        return self

    def eval(self) -> "Model":
        self.training = False
        return self

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out = []
        for layer in self.layers:
            for p in layer.parameters():
                out.append((p.name, p))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def buffers(self) -> dict:
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def reset_parameters(self, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.reset(rng)

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({k: v.copy() for k, v in self.buffers().items()})
        return state

    def load_state_dict(self, state: dict) -> None:
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(self.buffers())
        missing = set(targets) - set(state)
        if missing:
            raise ConfigError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, arr in targets.items():
            value = np.asarray(state[name], dtype=DTYPE)
            if value.shape != arr.shape:
                raise ConfigError(f"{name}: shape {value.shape} != expected {arr.shape}")
            arr[...] = value

    def spiking_layers(self) -> list[SpikingLayer]:
        out = []
        for layer in self.layers:
            if isinstance(layer, SpikingLayer):
                out.append(layer)
            elif isinstance(layer, ResidualBlock):
                out.extend(layer.spiking_layers())
        return out

    def emitter_names(self) -> list[str]:
        """Names of the trace entries in forward order."""
        names = []
        for layer in self.layers:
            if isinstance(layer, SpikingLayer):
                names.append(layer.name)
            elif isinstance(layer, ResidualBlock):
                names.append(layer.n1.name)
                names.append(layer.n2.name)
                if layer.downsample:
                    names.append(layer.sc_n.name)
                names.append(layer.out_emitter.name)
        return names

    def weighted_layers(self) -> list:
        out = []
        for layer in self.layers:
            if isinstance(layer, (Conv, Linear)):
                out.append(layer)
            elif isinstance(layer, ResidualBlock):
                out.extend(layer.weighted_layers())
        return out

    def biased_neuron_count(self) -> int:
        return sum(s.neuron_count for s in self.spiking_layers() if s.has_bias)

    def forward(self, x, record_taps: bool = False):
        """Run T timesteps. ``x`` is an encoded input of shape (T, B, *input_shape).

        Returns (logits of shape (B, classes), SpikeTrace).
        """
        x = ag.as_tensor(x)
        if x.ndim != len(self.input_shape) + 2 or tuple(x.shape[2:]) != self.input_shape:
            raise ConfigError(f"input shape {x.shape} does not match (T, B, *{self.input_shape})")
        if x.shape[0] != self.T:
            raise ConfigError(f"input has {x.shape[0]} timesteps, model expects T={self.T}")
        T, B = x.shape[0], x.shape[1]
        run = RunContext(T, B, self.training, record_taps)
        inp = LayerStats.from_spikes(
            "input", x.data.reshape(T, -1) != 0, kind="input",
            fan_out=self.input_point.fan_out, neuron_count=int(np.prod(self.input_shape)),
        )
        run.flow = (inp.events_per_t, inp.weighted_per_t)
        h = x.reshape((T * B,) + self.input_shape)
        for layer in self.layers[:-1]:
            h = layer.forward(h, run)
        out = self.readout.forward(h, run)
        logits = ag.mean(out.reshape((T, B, self.num_classes)), axis=0)
        trace = SpikeTrace(run.stats, T, self.N, B, inp)
        return logits, trace

    __call__ = forward


def model_forward(model: Model, encoded_input):
    return model.forward(encoded_input)


# ---------------------------------------------------------------- building


def _shipped_config(name: str) -> dict:
    fname = f"{name}.json"
    try:
        text = resources.files("mlsnn").joinpath("configs", fname).read_text()
    except FileNotFoundError:
        raise ConfigError(f"unknown topology {name!r}; known: {TOPOLOGIES}") from None
    return json.loads(text)


def resolve_config(config) -> dict:
    """Load a config from a path or dict and merge in a named topology if given."""
    if isinstance(config, (str, Path)):
        try:
            config = json.loads(Path(config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read model config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model config is not valid JSON: {exc}") from None
    config = copy.deepcopy(dict(config))
    topology = config.pop("topology", None)
    if topology is not None and "layers" not in config:
        base = _shipped_config(topology)
        base.update(config)
        config = base
    return config


def _neuron_cfg(config: dict, N: int) -> MLNeuronConfig:
    spec = dict(config.get("neuron", {}))
    spec.setdefault("N", N)
    try:
        return MLNeuronConfig(**spec)
    except TypeError as exc:
        raise ConfigError(f"bad neuron config: {exc}") from None


def _barrier_cfg(config: dict, variant: str, neuron: MLNeuronConfig) -> MLNeuronConfig:
    """Post-sum neuron: integrates the spike sum directly, one fused node per timestep.

    Its reset path is detached, so the gradient reaching the sum at timestep t
    comes only from the output at t: exactly the upstream gradient under STE,
    and the upstream gradient times the surrogate otherwise.
    """
    spec = dict(config.get("barrier") or {})
    backward = spec.pop("backward", None) or ("ste" if variant == "sparse" else "surrogate")
    try:
        return MLNeuronConfig(
            N=spec.pop("N", neuron.N), v_th=spec.pop("v_th", neuron.v_th), backward=backward,
            alpha=spec.pop("alpha", neuron.alpha), surrogate_mode="fused", charge="direct",
            detach_reset=spec.pop("detach_reset", True), **spec,
        )
    except TypeError as exc:
        raise ConfigError(f"bad barrier config: {exc}") from None


def build_model(config, seed: int = 0) -> Model:
    """Validate a model config and return an initialized Model."""
    config = resolve_config(config)
    for key in ("input_shape", "num_classes", "layers"):
        if key not in config:
            raise ConfigError(f"model config is missing {key!r}")
    T, N = int(config.get("T", 1)), int(config.get("N", 1))
    if T < 1 or N < 1:
        raise ConfigError("T and N must be >= 1")
    variant = config.get("variant", "sew")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    use_bn = bool(config.get("batchnorm", True))
    neuron = _neuron_cfg(config, N)
    barrier = _barrier_cfg(config, variant, neuron)

    shape = tuple(config["input_shape"])
    layers: list[Layer] = []
    input_point = _InputPoint()
    pending: list = [input_point]
    counters: dict[str, int] = {}
    prev_kind = None
    specs = config["layers"]
    if not specs:
        raise ConfigError("model needs at least one layer")

    def fresh(kind):
        counters[kind] = counters.get(kind, 0) + 1
        return f"{kind}{counters[kind] - 1}"

    for i, spec in enumerate(specs):
        kind = spec.get("kind")
        where = f"layer {i} ({kind})"
        try:
            if kind == "conv":
                if len(shape) != 3:
                    raise ConfigError("conv needs a (C, H, W) input")
                cin = spec.get("in_channels", shape[0])
                if cin != shape[0]:
                    raise ConfigError(f"in_channels {cin} does not match incoming {shape[0]} channels")
                layer = Conv(cin, spec["out_channels"], spec.get("kernel", 3), spec.get("stride", 1),
                             spec.get("padding", 0), name=spec.get("name", fresh("conv")))
                shape = layer.infer(shape)
                for p in pending:
                    p.fan_out += layer.fan_out
                pending = []
            elif kind == "linear":
                fin = spec.get("in_features", int(np.prod(shape)))
                if fin != int(np.prod(shape)):
                    raise ConfigError(f"in_features {fin} does not match incoming {int(np.prod(shape))} features")
                layer = Linear(fin, spec["out_features"], name=spec.get("name", fresh("linear")))
                shape = layer.infer(shape)
                for p in pending:
                    p.fan_out += layer.fan_out
                pending = []
            elif kind == "batchnorm":
                if not use_bn:
                    continue
                ch = spec.get("channels", shape[0])
                if ch != shape[0]:
                    raise ConfigError(f"channels {ch} does not match incoming {shape[0]} channels")
                layer = BatchNorm(ch, name=spec.get("name", fresh("bn")))
                shape = layer.infer(shape)
            elif kind == "avgpool":
                if len(shape) != 3:
                    raise ConfigError("avgpool needs a (C, H, W) input")
                layer = AvgPool(spec.get("kernel", 2), spec.get("stride"), name=spec.get("name", fresh("pool")))
                shape = layer.infer(shape)
            elif kind == "neuron":
                layer = SpikingLayer(neuron, name=spec.get("name", fresh("neuron")),
                                     has_bias=prev_kind in ("conv", "linear", "batchnorm"))
                shape = layer.infer(shape)
                pending.append(layer)
            elif kind == "residual_block":
                if len(shape) != 3:
                    raise ConfigError("residual_block needs a (C, H, W) input")
                cin = spec.get("in_channels", shape[0])
                if cin != shape[0]:
                    raise ConfigError(f"in_channels {cin} does not match incoming {shape[0]} channels")
                layer = ResidualBlock(counters.get("residual_block", 0), cin, spec["out_channels"],
                                      spec.get("stride", 1), variant, neuron, barrier, use_bn)
                fresh("residual_block")
                shape = layer.infer(shape)
                for p in pending:
                    p.fan_out += layer.input_fan_out
                pending = [layer.out_emitter]
            else:
                raise ConfigError(f"unknown layer kind; expected one of {LAYER_KINDS}")
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        except KeyError as exc:
            raise ConfigError(f"{where}: missing field {exc}") from None
        layers.append(layer)
        prev_kind = kind

    last = layers[-1]
    if not isinstance(last, Linear):
        raise ConfigError(f"layer {len(specs) - 1}: the last layer must be the linear readout")
    if last.fout != config["num_classes"]:
        raise ConfigError(
            f"layer {len(specs) - 1} (linear): readout has {last.fout} outputs for {config['num_classes']} classes"
        )
    model = Model(layers, config, config["input_shape"], config["num_classes"], T, N, variant)
    model.input_point = input_point
    model.reset_parameters(seed)
    return model


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: Model, directory, extra: Optional[dict] = None) -> None:
    """Write one tensor file per parameter/buffer plus manifest.json, atomically."""
    entries = []
    with atomic_directory(directory) as tmp:
        for name, arr in model.state_dict().items():
            fname = name.replace("/", "_") + ".mltn"
            ag.save_tensor(tmp / fname, arr)
            entries.append({"name": name, "shape": list(arr.shape), "file": fname})
        manifest = {"config": model.config, "parameters": entries}
        if extra:
            manifest["extra"] = extra
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(directory) -> Model:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint manifest: {exc}") from None
    model = build_model(manifest["config"])
    state = {}
    for entry in manifest["parameters"]:
        arr = ag.load_tensor(directory / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise ConfigError(f"checkpoint entry {entry['name']} has shape {arr.shape}, manifest says {entry['shape']}")
        state[entry["name"]] = arr
    model.load_state_dict(state)
    return model
