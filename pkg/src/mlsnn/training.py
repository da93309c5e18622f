"""Loss, optimizers, learning-rate schedule and the BPTT training loop."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import DTYPE, Tensor
from .coding import direct_encode
from .errors import ConfigError, DataError, NumericalError
from .profiler import SpikeTrace

METRIC_FIELDS = ("epoch", "loss", "train_acc", "val_acc", "total_events", "val_loss")


# ---------------------------------------------------------------- loss


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _ce_fwd(ctx, logits, labels):
    B, K = logits.shape
    logp = _log_softmax(logits.astype(np.float64))
    ctx.probs = np.exp(logp)
    ctx.labels = labels
    return np.asarray(-logp[np.arange(B), labels].mean(), dtype=DTYPE)


def _ce_bwd(ctx, g):
    B = len(ctx.labels)
    grad = ctx.probs.copy()
    grad[np.arange(B), ctx.labels] -= 1.0
    return ((g * grad / B).astype(DTYPE),)


_cross_entropy = ag.register_custom_backward(_ce_fwd, _ce_bwd, "cross_entropy")


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of (B, K) logits against integer labels."""
    logits = ag.as_tensor(logits)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ConfigError(f"cross entropy needs (B, K>=2) logits, got shape {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],) or not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"labels must be {logits.shape[0]} integers")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise DataError(f"label out of range [0, {logits.shape[1]})")
    return _cross_entropy(logits, labels=labels.astype(np.int64))


# ---------------------------------------------------------------- optimizers


@dataclass
class OptimizerConfig:
    """Optimizer and step-decay schedule. Defaults are the SGD recipe."""

    kind: str = "sgd"
    lr: float = 8e-2
    decay_factor: float = 0.9
    decay_every: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"optimizer kind must be 'sgd' or 'adam', got {self.kind!r}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1:
            raise ConfigError(f"decay_every must be >= 1, got {self.decay_every}")

    @classmethod
    def sgd(cls, **kw) -> "OptimizerConfig":
        return cls(**{"kind": "sgd", "lr": 8e-2, "decay_factor": 0.9, "decay_every": 50, **kw})

    @classmethod
    def adam(cls, **kw) -> "OptimizerConfig":
        return cls(**{"kind": "adam", "lr": 1e-3, "decay_factor": 0.5, "decay_every": 50, **kw})

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay_factor ** (epoch // self.decay_every)


@dataclass
class OptimizerState:
    """Adam moment buffers (float32) keyed by parameter name, plus the step counter."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(state: OptimizerState, params, config: OptimizerConfig, epoch: int = 0) -> None:
    """Apply one update in place to ``params``, a list of (name, Parameter)."""
    lr = config.lr_at(epoch)
    state.step += 1
    if config.kind == "sgd":
        for _, p in params:
            if p.trainable:
                p.data -= DTYPE(lr) * p.grad
        return
    b1, b2 = config.beta1, config.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for name, p in params:
        if not p.trainable:
            continue
        g = p.grad
        m = state.m.setdefault(name, np.zeros(p.shape, dtype=DTYPE))
        v = state.v.setdefault(name, np.zeros(p.shape, dtype=DTYPE))
        m *= DTYPE(b1)
        m += DTYPE(1 - b1) * g
        v *= DTYPE(b2)
        v += DTYPE(1 - b2) * g * g
        p.data -= DTYPE(lr) * (m / DTYPE(c1)) / (np.sqrt(v / DTYPE(c2)) + DTYPE(config.eps))


# ---------------------------------------------------------------- data


@dataclass
class Dataset:
    """Samples plus integer labels.

    Static inputs have shape (M, C, H, W) and are presented at every timestep.
    ``temporal`` inputs are (M, T, C, H, W) frame sequences used as is.
    """

    inputs: np.ndarray
    labels: np.ndarray
    temporal: bool = False
    num_classes: Optional[int] = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise DataError(f"{len(self.inputs)} samples but {len(self.labels)} labels")
        if not np.isfinite(self.inputs).all():
            raise DataError("dataset contains non-finite values")
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.inputs.shape[2:] if self.temporal else self.inputs.shape[1:])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.temporal, self.num_classes)

    def encode(self, idx, T: int, inputs: Optional[np.ndarray] = None) -> np.ndarray:
        """Batch ``idx`` as a (T, B, ...) input sequence."""
        x = self.inputs[idx] if inputs is None else inputs
        if not self.temporal:
            return direct_encode(x, T)
        if x.shape[1] != T:
            raise DataError(f"event frames have {x.shape[1]} timesteps, model expects T={T}")
        return np.ascontiguousarray(np.swapaxes(x, 0, 1))


def augment(x: np.ndarray, rng: np.random.Generator, flip: bool = False, resize: bool = False) -> np.ndarray:
    """Random horizontal flip and random up-scale-and-crop on (B, ..., H, W) batches."""
    x = x.copy()
    if flip:
        mask = rng.random(len(x)) < 0.5
        x[mask] = x[mask][..., ::-1]
    if resize:
        h, w = x.shape[-2:]
        for i in range(len(x)):
            s = rng.uniform(1.0, 1.25)
            hh, ww = int(round(h * s)), int(round(w * s))
            rows = (np.arange(hh) * h // hh)
            cols = (np.arange(ww) * w // ww)
            big = x[i][..., rows, :][..., cols]
            r0, c0 = rng.integers(0, hh - h + 1), rng.integers(0, ww - w + 1)
            x[i] = big[..., r0:r0 + h, c0:c0 + w]
    return x


# ---------------------------------------------------------------- loop


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    augment_flip: bool = False
    augment_resize: bool = False

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainState:
    epoch: int = 0
    seed: int = 0
    best_val_acc: float = -1.0
    optimizer: OptimizerState = field(default_factory=OptimizerState)


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    trace: SpikeTrace
    predictions: np.ndarray


def batches(n: int, batch_size: int, rng: Optional[np.random.Generator] = None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate(model, dataset: Dataset, batch_size: int = 32) -> EvalResult:
    """Inference in eval mode: mean loss, accuracy and the merged spike trace."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    was_training = model.training
    model.eval()
    total_loss, correct = 0.0, 0
    trace = SpikeTrace()
    preds = []
    try:
        with ag.no_grad():
            for idx in batches(len(dataset), batch_size):
                logits, tr = model.forward(dataset.encode(idx, model.T))
                total_loss += float(cross_entropy_loss(logits, dataset.labels[idx]).data) * len(idx)
                p = logits.data.argmax(axis=1)
                preds.append(p)
                correct += int((p == dataset.labels[idx]).sum())
                trace = trace.merged(tr)
    finally:
        model.training = was_training
    return EvalResult(total_loss / len(dataset), correct / len(dataset), trace, np.concatenate(preds))


def train_epoch(model, dataset: Dataset, config: TrainConfig, state: TrainState) -> tuple[float, float]:
    """One pass over ``dataset``; returns (mean loss, train accuracy)."""
    model.train()
    rng = np.random.default_rng([config.seed, state.epoch])
    params = model.named_parameters()
    total_loss, correct = 0.0, 0
    for idx in batches(len(dataset), config.batch_size, rng):
        x = dataset.inputs[idx]
        if config.augment_flip or config.augment_resize:
            x = augment(x, rng, config.augment_flip, config.augment_resize)
        model.zero_grad()
        logits, _ = model.forward(dataset.encode(idx, model.T, x))
        loss = cross_entropy_loss(logits, dataset.labels[idx])
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss at epoch {state.epoch}")
        loss.backward()
        for name, p in params:
            if not np.isfinite(p.grad).all():
                raise NumericalError(f"non-finite gradient in {name} at epoch {state.epoch}")
        optimizer_step(state.optimizer, params, config.optimizer, state.epoch)
        total_loss += value * len(idx)
        correct += int((logits.data.argmax(axis=1) == dataset.labels[idx]).sum())
    return total_loss / len(dataset), correct / len(dataset)


def train_loop(model, train_set: Dataset, config: TrainConfig, val_set: Optional[Dataset] = None,
               state: Optional[TrainState] = None, checkpoint_dir=None, log=None):
    """Train for ``config.epochs`` epochs (continuing from ``state`` if given).

    Each epoch evaluates on ``val_set`` (or the training set when absent) and
    records loss, accuracies and the total event count of that evaluation.
    The best model by validation accuracy is written to ``checkpoint_dir``.
    Returns (TrainState, list of metric dicts).
    """
    from .network import save_checkpoint

    if len(train_set) == 0:
        raise DataError("training set is empty")
    state = state or TrainState(seed=config.seed)
    val_set = val_set if val_set is not None and len(val_set) else train_set
    metrics = []
    while state.epoch < config.epochs:
        loss, train_acc = train_epoch(model, train_set, config, state)
        result = evaluate(model, val_set, config.batch_size)
        row = {
            "epoch": state.epoch, "loss": loss, "train_acc": train_acc, "val_acc": result.accuracy,
            "total_events": result.trace.total, "val_loss": result.loss,
        }
        metrics.append(row)
        if log is not None:
            log(row)
        if checkpoint_dir is not None and result.accuracy > state.best_val_acc:
            save_checkpoint(model, checkpoint_dir, extra={"epoch": state.epoch, "val_acc": result.accuracy})
        state.best_val_acc = max(state.best_val_acc, result.accuracy)
        state.epoch += 1
    return state, metrics


def metrics_to_csv(metrics) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in metrics:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def save_train_state(state: TrainState, directory) -> None:
    """Persist the optimizer moments and counters next to a checkpoint."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = sorted(state.optimizer.m)
    for i, name in enumerate(names):
        ag.save_tensor(directory / f"adam_m_{i}.mltn", state.optimizer.m[name])
        ag.save_tensor(directory / f"adam_v_{i}.mltn", state.optimizer.v[name])
    meta = {"epoch": state.epoch, "seed": state.seed, "best_val_acc": state.best_val_acc,
            "step": state.optimizer.step, "moments": names}
    (directory / "train_state.json").write_text(json.dumps(meta, indent=2))


def load_train_state(directory) -> TrainState:
    """Inverse of save_train_state."""
    directory = Path(directory)
    try:
        meta = json.loads((directory / "train_state.json").read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read train state: {exc}") from None
    opt = OptimizerState(step=meta["step"])
    for i, name in enumerate(meta["moments"]):
        opt.m[name] = ag.load_tensor(directory / f"adam_m_{i}.mltn")
        opt.v[name] = ag.load_tensor(directory / f"adam_v_{i}.mltn")
    return TrainState(meta["epoch"], meta["seed"], meta["best_val_acc"], opt)
