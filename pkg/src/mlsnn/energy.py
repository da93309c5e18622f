"""Event-driven energy estimate for SNN runs and a dense ANN baseline.

Energies are accumulated as integer femtojoules so the itemized rows add up
to the total exactly; they are reported in nanojoules as ``Decimal`` values
(exact decimal shifts of the integers).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import ConfigError, DataError

FJ_PER_NJ = 10**6
MODES = ("worst_case", "exact")
COMPONENTS = ("potentials", "weights", "bias", "io", "synaptic", "addressing")
ROW_NAMES = {
    "potentials": "Potentials",
    "weights": "Weights",
    "bias": "Bias",
    "io": "In/Out",
    "synaptic": "Synaptic Operations",
    "addressing": "Addressing",
    "total": "Total",
}


@dataclass(frozen=True)
class HardwareProfile:
    """Energy per memory access / operation, in nJ. Quantized to 1 fJ internally."""

    e_read_weight: float
    e_write_pot: float
    e_read_pot: float
    e_read_io: float
    e_write_io: float
    e_read_bias: float
    e_acc: float
    e_mac: float
    e_addr: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v < 0:
                raise ConfigError(f"profile field {f.name} must be a finite non-negative number, got {v!r}")

    def fj(self, name: str) -> int:
        return round(getattr(self, name) * FJ_PER_NJ)

    def scaled(self, c: float) -> "HardwareProfile":
        return HardwareProfile(**{k: v * c for k, v in asdict(self).items()})

    @classmethod
    def from_dict(cls, data: dict) -> "HardwareProfile":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown profile fields: {sorted(unknown)}")
        missing = known - set(data)
        if missing:
            raise ConfigError(f"profile is missing fields: {sorted(missing)}")
        return cls(**data)

    @classmethod
    def default(cls) -> "HardwareProfile":
        text = resources.files("mlsnn").joinpath("configs", "default-profile.json").read_text()
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "HardwareProfile":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read hardware profile: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"hardware profile is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("hardware profile must be a JSON object")
        return cls.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass
class EnergyBreakdown:
    """Itemized energy in integer femtojoules."""

    potentials: int = 0
    weights: int = 0
    bias: int = 0
    io: int = 0
    synaptic: int = 0
    addressing: int = 0

    @property
    def total(self) -> int:
        return sum(getattr(self, c) for c in COMPONENTS)

    def nj(self, component: str) -> Decimal:
        value = self.total if component == "total" else getattr(self, component)
        return Decimal(value).scaleb(-6)

    def rows(self) -> list[tuple[str, Decimal]]:
        return [(ROW_NAMES[c], self.nj(c)) for c in COMPONENTS + ("total",)]

    def __add__(self, other: "EnergyBreakdown") -> "EnergyBreakdown":
        return EnergyBreakdown(**{c: getattr(self, c) + getattr(other, c) for c in COMPONENTS})

    def to_dict(self) -> dict:
        out = {c: float(self.nj(c)) for c in COMPONENTS + ("total",)}
        out["fJ"] = {c: getattr(self, c) for c in COMPONENTS} | {"total": self.total}
        return out


def _check_trace(trace, model) -> None:
    if model is None:
        return
    expected = model.emitter_names()
    if trace.names != expected:
        raise ConfigError(f"trace layers {trace.names} do not match the model's {expected}")
    if trace.T != model.T:
        raise ConfigError(f"trace has T={trace.T}, model has T={model.T}")


def estimate_snn_energy(trace, model=None, profile: Optional[HardwareProfile] = None,
                        N: Optional[int] = None, mode: str = "worst_case") -> EnergyBreakdown:
    """Apply the per-event access contract to every entry of a spike trace.

    Each event leaving a layer reaches ``fan_out`` synapses: one weight read,
    one potential read and write, and N accumulations (or the spike's actual
    value in ``exact`` mode). Spiking neurons also pay an I/O buffer write and
    read and one address computation per emitted event; input events pay the
    buffer read and a multiply-accumulate per synapse since they are
    real-valued. Biases cost one read and one add per biased neuron per
    timestep, once per run.
    """
    if mode not in MODES:
        raise ConfigError(f"energy mode must be one of {MODES}, got {mode!r}")
    profile = profile or HardwareProfile.default()
    _check_trace(trace, model)
    N = trace.N if N is None else N
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    p = {f.name: profile.fj(f.name) for f in fields(HardwareProfile)}
    out = EnergyBreakdown()
    stats = list(trace.layers)
    if trace.input_stats is not None:
        stats.append(trace.input_stats)
    for s in stats:
        E, fan = s.total, s.fan_out
        out.weights += E * fan * p["e_read_weight"]
        out.potentials += E * fan * (p["e_read_pot"] + p["e_write_pot"])
        if s.kind == "input":
            out.synaptic += E * fan * p["e_mac"]
            out.io += E * p["e_read_io"]
            continue
        if mode == "worst_case":
            out.synaptic += E * fan * N * p["e_acc"]
        else:
            out.synaptic += s.weighted_total * fan * p["e_acc"]
        if s.kind == "neuron":
            out.io += E * (p["e_write_io"] + p["e_read_io"])
            out.addressing += E * p["e_addr"]
            if s.has_bias:
                out.bias += s.neuron_count * trace.T * (p["e_read_bias"] + p["e_acc"])
    return out


def estimate_ann_energy(model, profile: Optional[HardwareProfile] = None, samples: int = 1) -> EnergyBreakdown:
    """Dense accounting for the same topology run as a non-spiking network.

    Every MAC reads its weight once; every layer reads its input activations
    and writes its outputs once; biases match the SNN's with T = 1. There are
    no membrane potentials and no event addressing.
    """
    profile = profile or HardwareProfile.default()
    if samples < 0:
        raise ConfigError("samples must be non-negative")
    out = EnergyBreakdown()
    for layer in model.weighted_layers():
        macs = layer.macs()
        n_in = math.prod(layer.in_shape)
        n_out = math.prod(layer.out_shape)
        out.weights += samples * macs * profile.fj("e_read_weight")
        out.synaptic += samples * macs * profile.fj("e_mac")
        out.io += samples * (n_in * profile.fj("e_read_io") + n_out * profile.fj("e_write_io"))
    out.bias += model.biased_neuron_count() * (profile.fj("e_read_bias") + profile.fj("e_acc"))
    return out


def compare_energy(a: EnergyBreakdown, b: EnergyBreakdown) -> dict:
    """a.total / b.total plus per-component ratios (None where b's component is 0)."""
    if b.total <= 0:
        raise DataError("cannot compare against a breakdown with zero total energy")
    ratios = {c: (getattr(a, c) / getattr(b, c) if getattr(b, c) else None) for c in COMPONENTS}
    ratios["total"] = a.total / b.total
    return ratios


def breakdown_csv(columns: dict, ratios: Optional[dict] = None) -> str:
    """Rows named as in the itemized table, one column per labelled breakdown (nJ)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    labels = list(columns)
    ratio_labels = list(ratios or {})
    w.writerow(["row"] + labels + ratio_labels)
    for c in COMPONENTS + ("total",):
        vals = [str(columns[k].nj(c)) for k in labels]
        rvals = ["" if ratios[k][c] is None else repr(ratios[k][c]) for k in ratio_labels]
        w.writerow([ROW_NAMES[c]] + vals + rvals)
    return buf.getvalue()


def read_breakdown_csv(text: str) -> dict:
    """Parse breakdown_csv output back to {label: {row: Decimal}} for the breakdown columns."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "row":
        raise DataError("not an energy breakdown CSV")
    header = rows[0]
    out = {label: {} for label in header[1:]}
    for r in rows[1:]:
        for label, v in zip(header[1:], r[1:]):
            out[label][r[0]] = Decimal(v) if v else None
    return out
