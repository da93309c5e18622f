"""Command-line entry point: training, evaluation and the analysis commands.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .coding import rate_decode
from .data import load_dataset
from .energy import HardwareProfile, breakdown_csv, compare_energy, estimate_ann_energy, estimate_snn_energy
from .errors import ConfigError, DataError, NumericalError, SNNError
from .fsutil import atomic_write_text
from .network import VARIANTS, build_model, load_checkpoint, resolve_config, save_checkpoint
from .neuron import MLNeuronConfig, ml_forward_sequence, quantizer_oracle
from .profiler import SpikeTrace, avalanche_table, gradient_flow_report
from .training import (
    Dataset,
    OptimizerConfig,
    TrainConfig,
    evaluate,
    metrics_to_csv,
    save_train_state,
    train_loop,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
U64_MAX = 2**64 - 1

EXPERIMENT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {"type": ["object", "string"]},
        "dataset": {
            "type": "object",
            "properties": {
                "format": {"enum": ["synthetic", "tensors", "events"]},
                "path": {"type": "string"},
                "val_path": {"type": "string"},
                "train_size": {"type": "integer", "minimum": 1},
                "val_size": {"type": "integer", "minimum": 0},
                "size": {"type": "integer", "minimum": 4},
                "noise": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "sensor_width": {"type": "integer", "minimum": 1},
                "sensor_height": {"type": "integer", "minimum": 1},
                "slicing": {"enum": ["by_count", "by_time"]},
                "normalize": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "T": {"type": "integer", "minimum": 1},
        "N": {"type": "integer", "minimum": 1},
        "variant": {"enum": list(VARIANTS)},
        "optimizer": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["sgd", "adam"]},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "decay_factor": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "decay_every": {"type": "integer", "minimum": 1},
                "beta1": {"type": "number"},
                "beta2": {"type": "number"},
                "eps": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "epochs": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": U64_MAX},
        "out": {"type": "string"},
        "augment": {
            "type": "object",
            "properties": {"flip": {"type": "boolean"}, "resize": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "profile": {"type": "string"},
        "energy_mode": {"enum": ["worst_case", "exact"]},
    },
}

DEFAULT_EXPERIMENT = {
    "model": {"topology": "vgg-small"},
    "dataset": {"format": "synthetic"},
    "epochs": 10,
    "batch_size": 32,
    "seed": 0,
    "out": "runs/default",
}


# ---------------------------------------------------------------- config


def load_experiment(path, seed=None, out=None) -> dict:
    """Read and schema-validate an experiment config; apply --seed/--out overrides."""
    cfg = copy.deepcopy(DEFAULT_EXPERIMENT)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        try:
            jsonschema.validate(user, EXPERIMENT_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config {path}: {where}: {exc.message}") from None
        cfg.update(user)
        base = Path(path).parent
        for key in ("path", "val_path"):
            if key in cfg["dataset"]:
                cfg["dataset"][key] = str(base / cfg["dataset"][key])
        if isinstance(cfg["model"], str):
            cfg["model"] = str(base / cfg["model"])
        if "profile" in cfg:
            cfg["profile"] = str(base / cfg["profile"])
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = str(out)
    return cfg


def model_config(cfg: dict) -> dict:
    model = resolve_config(cfg["model"])
    for key in ("T", "N", "variant"):
        if key in cfg:
            model[key] = cfg[key]
    return model


def datasets(cfg: dict, T: int) -> tuple[Dataset, Dataset]:
    spec = dict(cfg.get("dataset", {}))
    spec.setdefault("seed", cfg["seed"])
    return load_dataset(spec, T)


def train_config(cfg: dict) -> TrainConfig:
    opt = OptimizerConfig(**cfg["optimizer"]) if "optimizer" in cfg else OptimizerConfig()
    aug = cfg.get("augment", {})
    return TrainConfig(cfg["epochs"], cfg["batch_size"], cfg["seed"], opt,
                       aug.get("flip", False), aug.get("resize", False))


def _checkpoint_dir(args, cfg) -> Path:
    return Path(args.checkpoint) if args.checkpoint else Path(cfg["out"]) / "checkpoint"


def _split(cfg, model, split: str) -> Dataset:
    train, val = datasets(cfg, model.T)
    return train if split == "train" else val


def _emit(out_dir, name: str, text: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(Path(out_dir) / name, text)


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg = load_experiment(args.config, args.seed, args.out)
    model = build_model(model_config(cfg), seed=cfg["seed"])
    train, val = datasets(cfg, model.T)
    if train.sample_shape != model.input_shape:
        raise DataError(f"dataset samples have shape {train.sample_shape}, model expects {model.input_shape}")
    out = Path(cfg["out"])
    tcfg = train_config(cfg)
    state, metrics = train_loop(model, train, tcfg, val, checkpoint_dir=out / "checkpoint",
                                log=(lambda r: print(json.dumps(r), file=sys.stderr)) if args.verbose else None)
    if not metrics:
        save_checkpoint(model, out / "checkpoint")
    save_checkpoint(model, out / "final")
    save_train_state(state, out / "final")
    atomic_write_text(out / "metrics.csv", metrics_to_csv(metrics))
    print(json.dumps({"epochs": len(metrics), "best_val_acc": state.best_val_acc, "out": str(out)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_experiment(args.config, args.seed, args.out)
    model = load_checkpoint(_checkpoint_dir(args, cfg))
    result = evaluate(model, _split(cfg, model, args.split), cfg["batch_size"])
    report = {"split": args.split, "loss": result.loss, "accuracy": result.accuracy,
              "total_events": result.trace.total}
    text = json.dumps(report, indent=2) + "\n"
    if args.out or args.config:
        atomic_write_text(Path(cfg["out"]) / "eval.json", text)
    print(text, end="")
    return EXIT_OK


def quantscan(v_th: float, N: int, T: int, lo: float, hi: float, steps: int):
    """Decoded output of an N-level neuron under constant input x for each x in the sweep."""
    if steps < 2:
        raise ConfigError("quantscan needs steps >= 2")
    if not hi > lo:
        raise ConfigError("quantscan needs hi > lo")
    xs = np.linspace(lo, hi, steps).astype(np.float32)
    spikes = ml_forward_sequence(MLNeuronConfig(N=N, v_th=v_th), np.broadcast_to(xs, (T, steps)).copy())
    return xs, rate_decode(spikes, N, T)


def cmd_quantscan(args) -> int:
    xs, decoded = quantscan(args.vth, args.N, args.T, args.lo, args.hi, args.steps)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "decoded", "oracle"])
    for x, d in zip(xs, decoded):
        w.writerow([repr(float(x)), repr(float(d)), repr(quantizer_oracle(float(x), args.N, args.T, args.vth))])
    _emit(args.out, "quantscan.csv", buf.getvalue())
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = load_experiment(args.config, args.seed, args.out)
    model = load_checkpoint(_checkpoint_dir(args, cfg))
    trace = evaluate(model, _split(cfg, model, args.split), cfg["batch_size"]).trace
    out = Path(cfg["out"])
    atomic_write_text(out / "trace.csv", trace.to_csv())
    atomic_write_text(out / "trace_summary.json", trace.to_json() + "\n")
    print(json.dumps({"total_events": trace.total, "layers": len(trace.layers)}))
    return EXIT_OK


def _read_trace(csv_path, summary_path) -> SpikeTrace:
    try:
        return SpikeTrace.from_files(Path(csv_path).read_text(), Path(summary_path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read trace files: {exc}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed trace files: {exc}") from None


def cmd_energy(args) -> int:
    cfg = load_experiment(args.config, args.seed, args.out)
    profile = HardwareProfile.load(args.profile or cfg["profile"]) if (args.profile or "profile" in cfg) \
        else HardwareProfile.default()
    mode = args.mode or cfg.get("energy_mode", "worst_case")
    model = None
    if args.checkpoint or not args.trace:
        model = load_checkpoint(_checkpoint_dir(args, cfg))
    if args.trace:
        summary = args.summary or str(Path(args.trace).with_name("trace_summary.json"))
        trace = _read_trace(args.trace, summary)
    else:
        trace = evaluate(model, _split(cfg, model, args.split), cfg["batch_size"]).trace
    columns = {"snn": estimate_snn_energy(trace, model, profile, mode=mode)}
    ratios = {}
    if args.baseline_trace:
        summary = args.baseline_summary or str(Path(args.baseline_trace).with_name("trace_summary.json"))
        base = _read_trace(args.baseline_trace, summary)
        columns["baseline"] = estimate_snn_energy(base, None, profile, mode=mode)
        ratios["snn/baseline"] = compare_energy(columns["snn"], columns["baseline"])
    if args.ann_baseline:
        if model is None:
            raise ConfigError("--ann-baseline needs the model: pass --checkpoint")
        columns["ann"] = estimate_ann_energy(model, profile, samples=trace.batch)
        ratios["snn/ann"] = compare_energy(columns["snn"], columns["ann"])
    out = Path(cfg["out"])
    report = {"mode": mode, "breakdowns": {k: v.to_dict() for k, v in columns.items()}, "ratios": ratios}
    atomic_write_text(out / "energy.json", json.dumps(report, indent=2) + "\n")
    atomic_write_text(out / "energy.csv", breakdown_csv(columns, ratios))
    print(breakdown_csv(columns, ratios), end="")
    return EXIT_OK


def cmd_gradflow(args) -> int:
    cfg = load_experiment(args.config, args.seed, args.out)
    base = model_config(cfg)
    if "variant" in base:
        del base["variant"]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg["seed"]]
    buf = None
    for label, variant, barrier in (("sew", "sew", None), ("sparse+ste", "sparse", "ste"),
                                    ("sparse-ste", "sparse", "surrogate")):
        mcfg = dict(base, variant=variant)
        if barrier:
            mcfg["barrier"] = dict(mcfg.get("barrier") or {}, backward=barrier)
        model = build_model(mcfg)
        if not model.blocks:
            raise ConfigError("gradflow needs a model with residual blocks")
        train, _ = datasets(cfg, model.T)
        n = min(args.batches * cfg["batch_size"], len(train))
        batches = [(train.encode(idx, model.T), train.labels[idx])
                   for idx in np.array_split(np.arange(n), max(1, min(args.batches, n)))]
        model.train()
        report = gradient_flow_report(model, batches, seeds)
        report.variant = label
        text = report.to_csv()
        buf = text if buf is None else buf + text.split("\n", 1)[1]
    _emit(cfg["out"], "gradflow.csv", buf)
    return EXIT_OK


def cmd_avalanche(args) -> int:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["depth", "events"])
    w.writerows(avalanche_table(args.gamma, args.depth))
    _emit(args.out, "avalanche.csv", buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="experiment config JSON")
    common.add_argument("--seed", type=_u64, default=argparse.SUPPRESS, help="global u64 seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")

    parser = argparse.ArgumentParser(prog="mlsnn", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch metrics to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "evaluate a checkpoint"),
                                 ("profile", cmd_profile, "per-layer spike activity of a checkpoint")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--checkpoint", help="checkpoint directory (default: <out>/checkpoint)")
        p.add_argument("--split", choices=("train", "val"), default="val")
        p.set_defaults(func=func)

    p = sub.add_parser("quantscan", parents=[common], help="transfer function of a multi-level neuron")
    p.add_argument("--vth", type=float, default=1.0)
    p.add_argument("--N", type=int, default=4)
    p.add_argument("--T", type=int, default=2)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1.2)
    p.add_argument("--steps", type=int, default=500)
    p.set_defaults(func=cmd_quantscan)

    p = sub.add_parser("energy", parents=[common], help="itemized energy estimate")
    p.add_argument("--trace", help="trace CSV written by 'profile'")
    p.add_argument("--summary", help="trace summary JSON (default: next to the trace CSV)")
    p.add_argument("--checkpoint", help="checkpoint directory (runs inference when no trace is given)")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--profile", help="hardware profile JSON (default: shipped placeholder profile)")
    p.add_argument("--mode", choices=("worst_case", "exact"))
    p.add_argument("--ann-baseline", action="store_true", help="add the dense ANN column and ratio")
    p.add_argument("--baseline-trace", help="second trace (e.g. a binary run) to compare against")
    p.add_argument("--baseline-summary")
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("gradflow", parents=[common], help="gradient norms at residual taps per variant")
    p.add_argument("--batches", type=int, default=4)
    p.add_argument("--seeds", help="comma-separated seeds (default: the global seed)")
    p.set_defaults(func=cmd_gradflow)

    p = sub.add_parser("avalanche", parents=[common], help="predicted events after stacked SEW blocks")
    p.add_argument("--gamma", type=int, required=True)
    p.add_argument("--depth", type=int, required=True)
    p.set_defaults(func=cmd_avalanche)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("config", "seed", "out"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, OverflowError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
