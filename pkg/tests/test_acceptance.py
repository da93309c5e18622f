"""Acceptance criteria 1-10, each with its runtime budget.

Run under pytest (a PASS/FAIL line per criterion is printed in the terminal
summary) or directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import functools
import sys
import time
import traceback
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from oracles import avalanche_network, check_op_gradient, if_neuron_reference, sigmoid_surrogate  # noqa: E402

from mlsnn import autograd as ag  # noqa: E402
from mlsnn.cli import quantscan  # noqa: E402
from mlsnn.coding import EventStream, events_to_frames, rate_decode  # noqa: E402
from mlsnn.data import synthetic_split  # noqa: E402
from mlsnn.energy import COMPONENTS, HardwareProfile, estimate_snn_energy  # noqa: E402
from mlsnn.network import build_model  # noqa: E402
from mlsnn.neuron import (  # noqa: E402
    IFState,
    MLNeuronConfig,
    MultiLevelNeuron,
    ml_forward_sequence,
    ml_step,
    quantizer_oracle,
)
from mlsnn.profiler import LayerStats, SpikeTrace, avalanche_predict  # noqa: E402
from mlsnn.training import OptimizerConfig, TrainConfig, cross_entropy_loss, train_loop  # noqa: E402

RESULTS: dict[int, tuple[str, bool, float, str]] = {}


def criterion(number: int, title: str, budget_s: float):
    """Record pass/fail and wall time; fail if the body exceeds its budget."""

    def wrap(fn):
        @functools.wraps(fn)
        def run():
            start = time.perf_counter()
            try:
                detail = fn() or ""
            except BaseException as exc:
                elapsed = time.perf_counter() - start
                RESULTS[number] = (title, False, elapsed, f"{type(exc).__name__}: {exc}")
                raise
            elapsed = time.perf_counter() - start
            ok = elapsed < budget_s
            RESULTS[number] = (title, ok, elapsed, detail if ok else f"over budget ({budget_s}s)")
            assert ok, f"criterion {number} took {elapsed:.2f}s, budget {budget_s}s"

        run.criterion = number
        return run

    return wrap


def result_lines() -> list[str]:
    lines = []
    for n in sorted(RESULTS):
        title, ok, elapsed, detail = RESULTS[n]
        status = "PASS" if ok else "FAIL"
        lines.append(f"criterion {n:2d} {status}  {title}  ({elapsed:.2f}s){'  ' + detail if detail else ''}")
    return lines


# ---------------------------------------------------------------- 1


@criterion(1, "quantizer exactness", 1.0)
def test_quantizer_exactness():
    N, T, v_th = 4, 2, 1.0
    xs, decoded = quantscan(v_th, N, T, 0.0, 1.2, 500)
    boundaries = np.arange(N * T + 1) / (N * T) * v_th
    keep = np.min(np.abs(xs[:, None].astype(np.float64) - boundaries[None, :]), axis=1) >= 1e-6
    assert keep.sum() > 450
    oracle = quantizer_oracle(xs[keep].astype(np.float64), N, T, v_th)
    assert np.array_equal(decoded[keep], oracle)
    assert len(np.unique(decoded[keep])) == N * T + 1
    assert np.all(decoded[xs >= v_th] == 1.0)
    return f"{keep.sum()} points, {len(np.unique(decoded[keep]))} levels"


# ---------------------------------------------------------------- 2


@criterion(2, "binary reduction", 5.0)
def test_binary_reduction():
    rng = np.random.default_rng(2)
    n_seq, T = 10_000, 8
    currents = rng.uniform(-1.0, 2.5, size=(T, n_seq)).astype(np.float32)
    currents[:, :100] = 1.0  # threshold-equality firing
    ml_state = IFState.zeros(n_seq)
    ml_spikes = np.stack([ml_step(ml_state, currents[t], 1) for t in range(T)])
    ref_spikes, ref_v = if_neuron_reference(currents[:, :500])
    assert np.array_equal(ml_spikes[:, :500], ref_spikes)
    assert np.array_equal(ml_state.V[:500], ref_v)
    # all 10^4 against the vectorized binary IF equations
    from mlsnn.neuron import if_step

    if_state = IFState.zeros(n_seq)
    if_spikes = np.stack([if_step(if_state, currents[t]) for t in range(T)])
    assert np.array_equal(ml_spikes, if_spikes)
    assert np.array_equal(ml_state.V, if_state.V)
    # and the taped neuron agrees with both
    taped = ml_forward_sequence(MLNeuronConfig(N=1), currents)
    assert np.array_equal(taped.data.data, if_spikes)
    return f"{n_seq} sequences x T={T}"


# ---------------------------------------------------------------- 3


@criterion(3, "T/N functional equivalence", 10.0)
def test_tn_equivalence():
    rng = np.random.default_rng(3)
    pairs = [(a, b) for a in range(1, 17) for b in range(1, 17) if a * b <= 16]
    for a, b in pairs:
        x = rng.uniform(-0.2, 1.2, size=200).astype(np.float32)
        binary = ml_forward_sequence(MLNeuronConfig(N=1), np.broadcast_to(x, (a * b, 200)).copy())
        multi = ml_forward_sequence(MLNeuronConfig(N=a), np.broadcast_to(x, (b, 200)).copy())
        assert np.array_equal(rate_decode(binary, 1, a * b), rate_decode(multi, a, b)), (a, b)
    return f"{len(pairs)} (a, b) pairs"


# ---------------------------------------------------------------- 4


def _smooth_op_cases(rng):
    n = rng.standard_normal
    return {
        "add": (ag.add, lambda: [n((3, 4)), n((3, 4))], {}),
        "sub": (ag.sub, lambda: [n((3, 4)), n((3, 4))], {}),
        "mul": (ag.mul, lambda: [n((3, 4)), n((3, 4))], {}),
        "scale": (ag.scale, lambda: [n((2, 5))], {"c": 1.7}),
        "add_scalar": (ag.add_scalar, lambda: [n((2, 5))], {"c": -0.3}),
        "identity": (ag.identity, lambda: [n((4,))], {}),
        "sigmoid": (ag.sigmoid, lambda: [n((3, 3))], {}),
        "reshape": (ag.reshape, lambda: [n((2, 6))], {"shape": (3, 4)}),
        "sum": (ag.sum_, lambda: [n((3, 4))], {"axis": 1}),
        "take": (ag.take, lambda: [n((3, 4))], {"index": 1}),
        "stack": (ag.stack_op, lambda: [n((2, 3)), n((2, 3)), n((2, 3))], {}),
        "matmul": (ag.matmul, lambda: [n((2, 3)), n((3, 4))], {}),
        "linear": (ag.linear, lambda: [n((2, 3)), n((3, 4)), n((4,))], {}),
        "conv2d": (ag.conv2d, lambda: [n((1, 2, 4, 4)), n((2, 2, 3, 3)), n((2,))], {"stride": 1, "padding": 1}),
        "conv2d_strided": (ag.conv2d, lambda: [n((1, 1, 5, 5)), n((2, 1, 3, 3)), n((2,))], {"stride": 2, "padding": 0}),
        "avgpool2d": (ag.avgpool2d, lambda: [n((1, 2, 4, 4))], {"k": 2}),
        "batchnorm": (ag.batchnorm, lambda: [n((4, 2, 2, 2)), n((2,)), n((2,))], {}),
        "channel_affine": (ag.channel_affine, lambda: [n((2, 3, 2, 2)), n((3,)), n((3,))], {}),
    }


@criterion(4, "gradient correctness", 30.0)
def test_gradient_correctness():
    rng = np.random.default_rng(4)
    trials = 100
    worst = {}
    for name, (op, make, kw) in _smooth_op_cases(rng).items():
        errs = [check_op_gradient(op, make(), rng, 1e-3, **kw) for _ in range(trials)]
        worst[name] = max(errs)
        assert worst[name] <= 1e-3, (name, worst[name])

    # the loss head is smooth too
    from oracles import numerical_gradient, relative_error

    for _ in range(trials):
        logits = rng.standard_normal((3, 4))
        labels = rng.integers(0, 4, size=3)
        t = ag.Tensor(logits, requires_grad=True)
        cross_entropy_loss(t, labels).backward()

        def f(z):
            z = z - z.max(axis=1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            return -logp[np.arange(3), labels].mean()

        (num,) = numerical_gradient(f, [t.data])
        assert relative_error(t.grad, num) <= 1e-3

    # recorded surrogate backward at every micro-timestep
    for alpha in (1.0, 5.0, 10.0):
        cfg = MLNeuronConfig(N=4, v_th=1.0, alpha=alpha)
        neuron = MultiLevelNeuron(cfg)
        neuron.record_micro = True
        neuron.forward(ag.Tensor(rng.uniform(-0.5, 1.5, size=(3, 50)), requires_grad=True))
        assert len(neuron.micro_nodes) == 3 * 4
        for node in neuron.micro_nodes:
            ones = np.ones(node.shape, dtype=np.float32)
            (local,) = node.op.backward_fn(node.ctx, ones)
            expected = sigmoid_surrogate(node.ctx.u, alpha)
            assert np.max(np.abs(local - expected)) <= 1e-6
    return f"{len(worst)} ops x {trials} trials, worst rel err {max(worst.values()):.1e}"


# ---------------------------------------------------------------- 5


def _desk_resnet(variant, barrier=None, **extra):
    cfg = {"topology": "resnet-small", "T": 1, "N": 4, "variant": variant, **extra}
    if barrier:
        cfg["barrier"] = {"backward": barrier}
    return cfg


def _tap_grads(model, x, labels):
    model.zero_grad()
    logits, _ = model.forward(x, record_taps=True)
    cross_entropy_loss(logits, labels).backward()
    return [(b.taps.A.grad, b.taps.R.grad, b.taps.O.grad) for b in model.blocks]


@criterion(5, "residual gradient equalities", 10.0)
def test_residual_gradient_equalities():
    rng = np.random.default_rng(5)
    checked = 0
    for variant, barrier in (("sew", None), ("sparse", "ste")):
        for seed in range(3):
            model = build_model(_desk_resnet(variant, barrier), seed=seed)
            assert len(model.blocks) == 3
            x = rng.uniform(0, 1, size=(1, 8, 1, 8, 8)).astype(np.float32)
            labels = rng.integers(0, 4, size=8)
            for a, r, o in _tap_grads(model, x, labels):
                assert np.linalg.norm(o) > 0
                assert np.array_equal(a, o) and np.array_equal(r, o)
                checked += 1

    # sparse without STE, sums held at S - V_th = 10
    cfg = _desk_resnet("sparse", "surrogate", N=6, batchnorm=False)
    cfg["neuron"] = {"v_th": 2.0, "alpha": 5.0}
    model = build_model(cfg, seed=0)
    for layer in model.weighted_layers()[:-1]:
        layer.b.data[...] = 1000.0
    x = rng.uniform(0, 1, size=(1, 4, 1, 8, 8)).astype(np.float32)
    grads = _tap_grads(model, x, rng.integers(0, 4, size=4))
    for block in model.blocks:
        assert np.all(block.taps.S.data - 2.0 == 10.0)
    assert np.linalg.norm(grads[-1][2]) > 0
    ratios = []
    for a, r, o in grads:
        norm_o = np.linalg.norm(o.astype(np.float64))
        if norm_o == 0:
            continue
        for g in (a, r):
            assert np.linalg.norm(g.astype(np.float64)) < 1e-6 * norm_o
        ratios.append(np.linalg.norm(a.astype(np.float64)) / norm_o)
    return f"{checked} exact tap checks; saturated |dA|/|dO| <= {max(ratios):.1e}"


# ---------------------------------------------------------------- 6


@criterion(6, "avalanche reproduction", 5.0)
def test_avalanche():
    rng = np.random.default_rng(6)
    T, size = 8, 6
    model = avalanche_network(3, T, size)
    for gamma in (1, 5, 17, 36):
        x = np.zeros((T, 1, 1, size, size), dtype=np.float32)
        sites = rng.choice(size * size, size=gamma, replace=False)
        x[0, 0, 0].reshape(-1)[sites] = 1.0
        with ag.no_grad():
            _, trace = model.eval().forward(x)
        assert trace.layer("neuron0").total == gamma
        for d in range(1, 4):
            assert trace.layer(f"sum_{d - 1}").total == gamma * 2**d == avalanche_predict(gamma, d)
    return "sum_0..sum_2 = 2, 4, 8 x gamma"


# ---------------------------------------------------------------- 7


def _random_trace(rng, T=3, n_layers=4, scale=50):
    layers = []
    for i in range(n_layers):
        ev = rng.integers(0, scale, size=T)
        wt = ev * rng.integers(1, 5, size=T)
        kind = "sum" if i == 2 else "neuron"
        layers.append(LayerStats(f"l{i}", ev, wt, kind, fan_out=int(rng.integers(0, 20)),
                                 neuron_count=int(rng.integers(1, 30)), has_bias=bool(i % 2 == 0)))
    inp = LayerStats("input", rng.integers(0, scale, size=T), np.zeros(T, dtype=np.int64), "input",
                     fan_out=int(rng.integers(1, 20)), neuron_count=16)
    return SpikeTrace(layers, T, 4, 2, inp)


def _with_more_events(trace, rng):
    bumped = []
    for s in trace.layers:
        extra = rng.integers(0, 5, size=len(s.events_per_t))
        bumped.append(LayerStats(s.name, s.events_per_t + extra, s.weighted_per_t + extra * 4, s.kind,
                                 s.fan_out, s.neuron_count, s.has_bias))
    return SpikeTrace(bumped, trace.T, trace.N, trace.batch, trace.input_stats)


@criterion(7, "energy model consistency", 5.0)
def test_energy_consistency():
    rng = np.random.default_rng(7)
    profile = HardwareProfile.default()
    for _ in range(100):
        trace = _random_trace(rng)
        for mode in ("worst_case", "exact"):
            e = estimate_snn_energy(trace, profile=profile, mode=mode)
            assert e.total == sum(getattr(e, c) for c in COMPONENTS)
            assert sum((v for _, v in e.rows()[:-1])) == e.rows()[-1][1]
            more = estimate_snn_energy(_with_more_events(trace, rng), profile=profile, mode=mode)
            for c in ("potentials", "weights", "io", "synaptic", "addressing"):
                assert getattr(more, c) >= getattr(e, c)
            c = int(rng.integers(2, 10))
            scaled = estimate_snn_energy(trace, profile=profile.scaled(c), mode=mode)
            for comp in COMPONENTS:
                assert getattr(scaled, comp) == c * getattr(e, comp)
        # N x ACC: synaptic of spike-emitting layers scales exactly with N
        spikes_only = SpikeTrace(trace.layers, trace.T, 1, trace.batch, None)
        binary = estimate_snn_energy(spikes_only, profile=profile, N=1)
        for n in (2, 4, 8):
            multi = estimate_snn_energy(spikes_only, profile=profile, N=n)
            assert multi.synaptic == n * binary.synaptic
            assert (multi.weights, multi.potentials, multi.io) == (binary.weights, binary.potentials, binary.io)
    return "100 random traces"


# ---------------------------------------------------------------- 8


@criterion(8, "event conservation", 5.0)
def test_event_conservation():
    rng = np.random.default_rng(8)
    for _ in range(100):
        m = int(rng.integers(1, 2000))
        w, h = int(rng.integers(1, 40)), int(rng.integers(1, 40))
        t = np.sort(rng.integers(0, 10**6, size=m))
        stream = EventStream(t, rng.integers(0, w, size=m), rng.integers(0, h, size=m),
                             rng.integers(0, 2, size=m), w, h)
        T = int(rng.integers(1, 17))
        for slicing in ("by_count", "by_time"):
            frames = events_to_frames(stream, T, slicing)
            assert frames.shape == (T, 2, h, w)
            assert int(frames.sum()) == m
    return "100 streams x 2 slicings"


# ---------------------------------------------------------------- 9


def _train(model_cfg, seed, epochs, data):
    train, val = data
    model = build_model(model_cfg, seed=seed)
    cfg = TrainConfig(epochs=epochs, batch_size=32, seed=seed, optimizer=OptimizerConfig.sgd())
    _, metrics = train_loop(model, train, cfg, val)
    return model, metrics


@criterion(9, "desk-scale learning", 600.0)
def test_desk_scale_learning():
    data = synthetic_split(256, 128, seed=0)
    _, ml = _train({"topology": "vgg-small", "T": 1, "N": 4}, 0, 60, data)
    first = next(r["epoch"] for r in ml if r["train_acc"] >= 0.9)
    _, binary = _train({"topology": "vgg-small", "T": 4, "N": 1}, 0, 60, data)
    acc_ml, acc_bin = ml[-1]["train_acc"], binary[-1]["train_acc"]
    assert acc_ml >= 0.9
    assert abs(acc_ml - acc_bin) <= 0.03

    wins = 0
    for seed in range(5):
        split = synthetic_split(256, 128, seed=seed)
        _, sew = _train(_desk_resnet("sew"), seed, 30, split)
        _, sparse = _train(_desk_resnet("sparse"), seed, 30, split)
        wins += sparse[-1]["total_events"] <= sew[-1]["total_events"]
    assert wins >= 4
    return (f"[T=1,N=4] >=90% at epoch {first}, final {acc_ml:.3f}; [T=4,N=1] final {acc_bin:.3f}; "
            f"sparse <= sew events on {wins}/5 seeds")


# ---------------------------------------------------------------- 10


@criterion(10, "loss-curve ordering", 600.0)
def test_loss_curve_ordering():
    wins = 0
    for seed in range(5):
        split = synthetic_split(256, 128, seed=seed)
        final = {}
        for label, cfg in (("sew", _desk_resnet("sew")), ("sparse+ste", _desk_resnet("sparse", "ste")),
                           ("sparse-ste", _desk_resnet("sparse", "surrogate"))):
            _, metrics = _train(cfg, seed, 30, split)
            final[label] = metrics[-1]["val_loss"]
        wins += final["sparse-ste"] > final["sparse+ste"] and final["sparse-ste"] > final["sew"]
    assert wins >= 4
    return f"sparse-ste highest final val loss on {wins}/5 seeds"


def main() -> int:
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_") and hasattr(v, "criterion")]
    for test in sorted(tests, key=lambda f: f.criterion):
        try:
            test()
        except BaseException:
            traceback.print_exc()
    for line in result_lines():
        print(line)
    return 0 if len(RESULTS) == 10 and all(ok for _, ok, _, _ in RESULTS.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
