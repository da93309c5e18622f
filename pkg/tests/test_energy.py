import json
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlsnn.energy import (
    COMPONENTS,
    EnergyBreakdown,
    HardwareProfile,
    breakdown_csv,
    compare_energy,
    estimate_ann_energy,
    estimate_snn_energy,
    read_breakdown_csv,
)
from mlsnn.errors import ConfigError, DataError
from mlsnn.network import build_model
from mlsnn.profiler import LayerStats, SpikeTrace

UNIT = HardwareProfile(e_read_weight=0.001, e_write_pot=0.002, e_read_pot=0.003, e_read_io=0.004,
                       e_write_io=0.005, e_read_bias=0.006, e_acc=0.0001, e_mac=0.0004, e_addr=0.0002)


def _one_event_trace(N=1, events=1, fan=10):
    layer = LayerStats("l0", [events], [events], "neuron", fan_out=fan, neuron_count=1, has_bias=False)
    return SpikeTrace([layer], 1, N, 1)


def test_zero_event_trace_leaves_only_bias():
    layer = LayerStats("l0", [0, 0], [0, 0], "neuron", fan_out=7, neuron_count=5, has_bias=True)
    e = estimate_snn_energy(SpikeTrace([layer], 2, 4, 1), profile=UNIT)
    assert (e.potentials, e.weights, e.synaptic, e.addressing, e.io) == (0, 0, 0, 0, 0)
    assert e.bias == 5 * 2 * (UNIT.fj("e_read_bias") + UNIT.fj("e_acc"))


def test_one_event_fan_out_ten():
    e = estimate_snn_energy(_one_event_trace(), profile=UNIT)
    assert e.weights == 10 * UNIT.fj("e_read_weight")
    assert e.potentials == 10 * (UNIT.fj("e_read_pot") + UNIT.fj("e_write_pot"))
    assert e.synaptic == 10 * UNIT.fj("e_acc")
    assert e.addressing == UNIT.fj("e_addr")
    assert e.io == UNIT.fj("e_write_io") + UNIT.fj("e_read_io")
    e4 = estimate_snn_energy(_one_event_trace(N=4), profile=UNIT)
    assert e4.synaptic == 40 * UNIT.fj("e_acc")
    assert (e4.weights, e4.potentials) == (e.weights, e.potentials)


def test_exact_mode_uses_spike_values():
    layer = LayerStats("l0", [2], [5], "neuron", fan_out=3, neuron_count=2)
    worst = estimate_snn_energy(SpikeTrace([layer], 1, 4, 1), profile=UNIT)
    exact = estimate_snn_energy(SpikeTrace([layer], 1, 4, 1), profile=UNIT, mode="exact")
    assert worst.synaptic == 2 * 3 * 4 * UNIT.fj("e_acc")
    assert exact.synaptic == 5 * 3 * UNIT.fj("e_acc")
    assert exact.synaptic <= worst.synaptic


def test_ann_linear_layer_counts():
    model = build_model({"input_shape": [2], "num_classes": 3, "layers": [{"kind": "linear", "out_features": 3}]})
    e = estimate_ann_energy(model, UNIT)
    assert model.readout.macs() == 6
    assert e.weights == 6 * UNIT.fj("e_read_weight")
    assert e.synaptic == 6 * UNIT.fj("e_mac")
    assert e.potentials == 0 and e.addressing == 0


def test_ann_zero_layers():
    class Empty:
        def weighted_layers(self):
            return []

        def biased_neuron_count(self):
            return 0

    e = estimate_ann_energy(Empty(), UNIT)
    assert e.total == 0 and all(getattr(e, c) == 0 for c in COMPONENTS)


def test_ann_potentials_always_zero():
    for topo in ("vgg-small", "resnet-small"):
        assert estimate_ann_energy(build_model({"topology": topo})).potentials == 0


def test_multilevel_bias_matches_ann_at_T1():
    model = build_model({"topology": "vgg-small", "T": 1})
    _, trace = model.forward(np.zeros((1, 2, 1, 8, 8), dtype=np.float32))
    assert estimate_snn_energy(trace, model).bias == estimate_ann_energy(model).bias
    model4 = build_model({"topology": "vgg-small", "T": 4, "N": 1})
    _, trace4 = model4.forward(np.zeros((4, 2, 1, 8, 8), dtype=np.float32))
    assert estimate_snn_energy(trace4, model4).bias == 4 * estimate_ann_energy(model).bias


def test_compare_energy():
    a = EnergyBreakdown(weights=50)
    b = EnergyBreakdown(weights=100)
    assert compare_energy(a, a)["total"] == 1.0
    assert compare_energy(a, b)["total"] == 0.5
    assert compare_energy(a, b)["bias"] is None
    with pytest.raises(DataError):
        compare_energy(a, EnergyBreakdown())


def test_trace_model_mismatch():
    model = build_model({"topology": "vgg-small"})
    with pytest.raises(ConfigError):
        estimate_snn_energy(_one_event_trace(), model)
    with pytest.raises(ConfigError):
        estimate_snn_energy(_one_event_trace(), mode="typical")


def _trace(counts, fans):
    layers = [LayerStats(f"l{i}", c, c, "neuron", fan_out=f, neuron_count=3, has_bias=True)
              for i, (c, f) in enumerate(zip(counts, fans))]
    return SpikeTrace(layers, len(counts[0]), 2, 1)


counts_st = st.lists(st.lists(st.integers(0, 1000), min_size=2, max_size=2), min_size=1, max_size=4)


@settings(max_examples=100, deadline=None)
@given(counts_st, st.data())
def test_linearity_over_merged_traces(counts, data):
    fans = data.draw(st.lists(st.integers(0, 50), min_size=len(counts), max_size=len(counts)))
    other = data.draw(st.lists(st.lists(st.integers(0, 1000), min_size=2, max_size=2),
                               min_size=len(counts), max_size=len(counts)))
    a, b = _trace(counts, fans), _trace(other, fans)
    ea, eb, eab = (estimate_snn_energy(t) for t in (a, b, a.merged(b)))
    combined = ea + eb
    assert eab.total == combined.total - ea.bias
    assert eab.bias == ea.bias == eb.bias


@settings(max_examples=100, deadline=None)
@given(counts_st, st.integers(1, 20))
def test_profile_scaling(counts, c):
    trace = _trace(counts, [5] * len(counts))
    base = estimate_snn_energy(trace, profile=UNIT)
    scaled = estimate_snn_energy(trace, profile=UNIT.scaled(c))
    assert all(getattr(scaled, k) == c * getattr(base, k) for k in COMPONENTS)


def test_profile_validation_and_io(tmp_path):
    with pytest.raises(ConfigError):
        HardwareProfile.from_dict({**json.loads(UNIT.to_json()), "e_acc": -1.0})
    with pytest.raises(ConfigError):
        HardwareProfile.from_dict({"e_acc": 1.0})
    with pytest.raises(ConfigError):
        HardwareProfile.from_dict({**json.loads(UNIT.to_json()), "e_extra": 1.0})
    (tmp_path / "p.json").write_text(UNIT.to_json())
    assert HardwareProfile.load(tmp_path / "p.json") == UNIT
    with pytest.raises(ConfigError):
        HardwareProfile.load(tmp_path / "missing.json")
    d = HardwareProfile.default()
    assert 10 <= d.e_read_weight / d.e_acc <= 100


def test_breakdown_csv_rows_sum_to_total():
    e = EnergyBreakdown(potentials=123457, weights=3, bias=99999, io=1, synaptic=7, addressing=11)
    text = breakdown_csv({"snn": e, "ann": EnergyBreakdown(weights=5)}, {"snn/ann": compare_energy(e, EnergyBreakdown(weights=5))})
    rows = [r.split(",")[0] for r in text.splitlines()[1:]]
    assert rows == ["Potentials", "Weights", "Bias", "In/Out", "Synaptic Operations", "Addressing", "Total"]
    parsed = read_breakdown_csv(text)["snn"]
    assert sum(v for k, v in parsed.items() if k != "Total") == parsed["Total"] == Decimal(e.total).scaleb(-6)
    assert e.to_dict()["fJ"]["total"] == e.total
