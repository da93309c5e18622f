"""Spike-activity accounting, the avalanche predictor and gradient-flow reports.

An *event* is a nonzero spike entry: a multi-level spike of any value counts
once. The value-weighted count (sum of z) is tracked alongside because the
energy model's exact mode needs it.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError

STAT_KINDS = ("neuron", "sum", "input")
U64_MAX = 2**64 - 1


def count_events(z) -> int:
    """Number of nonzero entries, i.e. sum of min(z, 1) for non-negative spikes."""
    values = getattr(z, "data", z)
    values = getattr(values, "data", values)
    return int(np.count_nonzero(np.asarray(values)))


@dataclass
class LayerStats:
    """Per-timestep event counts of one spike-emitting layer (or summation point)."""

    name: str
    events_per_t: np.ndarray
    weighted_per_t: np.ndarray
    kind: str = "neuron"
    fan_out: int = 0
    neuron_count: int = 0
    has_bias: bool = False
    histogram: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.events_per_t = np.asarray(self.events_per_t, dtype=np.int64)
        self.weighted_per_t = np.asarray(self.weighted_per_t, dtype=np.int64)
        self.histogram = np.asarray(self.histogram, dtype=np.int64)
        if self.kind not in STAT_KINDS:
            raise ConfigError(f"unknown stats kind {self.kind!r}")
        if self.events_per_t.shape != self.weighted_per_t.shape:
            raise ConfigError(f"{self.name}: events and weighted events differ in length")

    @property
    def total(self) -> int:
        return int(self.events_per_t.sum())

    @property
    def weighted_total(self) -> int:
        return int(self.weighted_per_t.sum())

    @classmethod
    def from_spikes(cls, name: str, spikes: np.ndarray, **kw) -> "LayerStats":
        """Build stats from a (T, B, ...) array of integer-valued spikes."""
        spikes = np.asarray(spikes)
        flat = spikes.reshape(spikes.shape[0], -1)
        vals = np.rint(flat).astype(np.int64)
        events = np.count_nonzero(vals, axis=1)
        weighted = vals.sum(axis=1)
        hist = np.bincount(vals.ravel(), minlength=1) if vals.size else np.zeros(1, dtype=np.int64)
        return cls(name, events, weighted, histogram=hist, **kw)

    def merged(self, other: "LayerStats") -> "LayerStats":
        if (other.name, other.kind, other.fan_out, other.neuron_count) != (
            self.name, self.kind, self.fan_out, self.neuron_count
        ):
            raise ConfigError(f"cannot merge stats of {self.name!r} with {other.name!r}")
        if other.events_per_t.shape != self.events_per_t.shape:
            raise ConfigError(f"{self.name}: timestep counts differ")
        n = max(len(self.histogram), len(other.histogram))
        hist = np.zeros(n, dtype=np.int64)
        hist[: len(self.histogram)] += self.histogram
        hist[: len(other.histogram)] += other.histogram
        return LayerStats(
            self.name, self.events_per_t + other.events_per_t, self.weighted_per_t + other.weighted_per_t,
            self.kind, self.fan_out, self.neuron_count, self.has_bias, hist,
        )

    def summary(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "total": self.total,
            "weighted_total": self.weighted_total,
            "fan_out": int(self.fan_out),
            "neuron_count": int(self.neuron_count),
            "has_bias": bool(self.has_bias),
            "histogram": [int(v) for v in self.histogram],
        }


@dataclass
class SpikeTrace:
    """Ordered per-layer statistics of one run over a batch."""

    layers: list = field(default_factory=list)
    T: int = 0
    N: int = 1
    batch: int = 0
    input_stats: Optional[LayerStats] = None

    @property
    def total(self) -> int:
        return trace_totals(self)

    @property
    def weighted_total(self) -> int:
        return sum(s.weighted_total for s in self.layers)

    def layer(self, name: str) -> LayerStats:
        for s in self.layers:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def names(self) -> list:
        return [s.name for s in self.layers]

    def merged(self, other: "SpikeTrace") -> "SpikeTrace":
        """Associative sum of two traces of the same model."""
        if not self.layers and self.batch == 0:
            return other
        if (self.T, self.N, self.names) != (other.T, other.N, other.names):
            raise ConfigError("cannot merge traces of different models or settings")
        inp = None
        if self.input_stats is not None and other.input_stats is not None:
            inp = self.input_stats.merged(other.input_stats)
        return SpikeTrace(
            [a.merged(b) for a, b in zip(self.layers, other.layers)],
            self.T, self.N, self.batch + other.batch, inp,
        )

    def summary(self) -> dict:
        return {
            "T": self.T,
            "N": self.N,
            "batch": self.batch,
            "layers": [s.summary() for s in self.layers],
            "input": self.input_stats.summary() if self.input_stats is not None else None,
            "total": self.total,
            "weighted_total": self.weighted_total,
        }

    def rows(self):
        stats = ([self.input_stats] if self.input_stats is not None else []) + list(self.layers)
        for s in stats:
            for t in range(len(s.events_per_t)):
                yield s.name, t, int(s.events_per_t[t]), int(s.weighted_per_t[t])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "timestep", "events", "weighted_events"])
        w.writerows(self.rows())
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)

    @classmethod
    def from_files(cls, csv_text: str, summary_text: str) -> "SpikeTrace":
        """Rebuild a trace from its CSV rows and summary JSON."""
        try:
            summary = json.loads(summary_text)
            rows = list(csv.DictReader(io.StringIO(csv_text)))
        except (json.JSONDecodeError, csv.Error) as exc:
            raise DataError(f"malformed trace files: {exc}") from None
        T = int(summary["T"])
        per_layer: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for r in rows:
            ev, wt = per_layer.setdefault(
                r["layer"], (np.zeros(T, dtype=np.int64), np.zeros(T, dtype=np.int64))
            )
            t = int(r["timestep"])
            ev[t] = int(r["events"])
            wt[t] = int(r["weighted_events"])

        def build(meta):
            if meta["name"] not in per_layer:
                raise DataError(f"trace CSV has no rows for layer {meta['name']!r}")
            ev, wt = per_layer[meta["name"]]
            return LayerStats(
                meta["name"], ev, wt, meta["kind"], meta["fan_out"], meta["neuron_count"],
                meta["has_bias"], np.array(meta.get("histogram", []), dtype=np.int64),
            )

        inp = build(summary["input"]) if summary.get("input") else None
        trace = cls([build(m) for m in summary["layers"]], T, int(summary["N"]), int(summary["batch"]), inp)
        if trace.total != summary["total"]:
            raise DataError("trace CSV totals disagree with the summary JSON")
        return trace


def trace_totals(trace: SpikeTrace) -> int:
    """Network-wide event count: the sum of the per-layer totals."""
    return sum(s.total for s in trace.layers)


def avalanche_predict(gamma: int, depth: int) -> int:
    """Events after `depth` ADD-aggregated residual blocks whose paths preserve event counts."""
    if gamma < 0 or depth < 0:
        raise ConfigError("gamma and depth must be non-negative")
    out = int(gamma) << int(depth)
    if out > U64_MAX:
        raise OverflowError(f"predicted event count {gamma}*2^{depth} exceeds u64")
    return out


def avalanche_table(gamma: int, depth: int) -> list[tuple[int, int]]:
    return [(d, avalanche_predict(gamma, d)) for d in range(depth + 1)]


# ---------------------------------------------------------------- gradient flow


@dataclass
class GradFlowRow:
    block: int
    seed: int
    batch: int
    norm_a: float
    norm_r: float
    norm_o: float


@dataclass
class GradFlowReport:
    """Per-block L2 norms of the gradients at the direct path, shortcut and block output."""

    variant: str
    rows: list = field(default_factory=list)

    def blocks(self) -> list[int]:
        return sorted({r.block for r in self.rows})

    def aggregate(self) -> list[dict]:
        """Mean and standard deviation per block: over batches, then across seeds."""
        out = []
        for b in self.blocks():
            rows = [r for r in self.rows if r.block == b]
            seeds = sorted({r.seed for r in rows})
            entry = {"block": b}
            for key in ("norm_a", "norm_r", "norm_o"):
                per_seed = [np.mean([getattr(r, key) for r in rows if r.seed == s]) for s in seeds]
                entry[f"{key}_mean"] = float(np.mean(per_seed))
                entry[f"{key}_std"] = float(np.std(per_seed))
            out.append(entry)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = ["variant", "block", "norm_a_mean", "norm_a_std", "norm_r_mean", "norm_r_std",
                "norm_o_mean", "norm_o_std"]
        w.writerow(keys)
        for e in self.aggregate():
            w.writerow([self.variant] + [repr(e[k]) if isinstance(e[k], float) else e[k] for k in keys[1:]])
        return buf.getvalue()


def _l2(grad) -> float:
    if grad is None:
        return 0.0
    return float(np.linalg.norm(np.asarray(grad, dtype=np.float64).ravel()))


def gradient_flow_report(model, batches: Iterable, seeds: Sequence[int] = (0,), loss_fn=None) -> GradFlowReport:
    """Forward + backward on each (inputs, labels) batch and record tap gradient norms.

    ``inputs`` are already encoded, shape (T, B, ...). The model is
    re-initialized from every seed before its batches are run.
    """
    from .training import cross_entropy_loss

    loss_fn = loss_fn or cross_entropy_loss
    if not getattr(model, "blocks", None):
        raise ConfigError("gradient flow report needs a model with residual blocks")
    batches = list(batches)
    report = GradFlowReport(model.variant)
    for seed in seeds:
        model.reset_parameters(seed)
        for bi, (x, y) in enumerate(batches):
            model.zero_grad()
            logits, _ = model.forward(x, record_taps=True)
            loss_fn(logits, y).backward()
            for k, block in enumerate(model.blocks):
                taps = block.taps
                report.rows.append(
                    GradFlowRow(k, seed, bi, _l2(taps.A.grad), _l2(taps.R.grad), _l2(taps.O.grad))
                )
    return report
