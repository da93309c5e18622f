"""Train a small multi-level VGG and a binary counterpart, then compare energy.

Both models see the same synthetic oriented-bar data. The multi-level model
uses one timestep with N=4 levels; the binary one uses T=4 timesteps with
N=1. The itemized breakdown is printed alongside a dense ANN baseline.
"""

from mlsnn.data import synthetic_split
from mlsnn.energy import breakdown_csv, compare_energy, estimate_ann_energy, estimate_snn_energy
from mlsnn.network import build_model
from mlsnn.training import TrainConfig, evaluate, train_loop


def train(T, N, train_set, val_set):
    model = build_model({"topology": "vgg-small", "T": T, "N": N}, seed=0)
    _, metrics = train_loop(model, train_set, TrainConfig(epochs=30, batch_size=32), val_set)
    result = evaluate(model, val_set)
    print(f"T={T} N={N}: val acc {result.accuracy:.3f}, {result.trace.total} events")
    return model, result.trace


def main():
    train_set, val_set = synthetic_split(256, 128, seed=0)
    multi, multi_trace = train(1, 4, train_set, val_set)
    _, binary_trace = train(4, 1, train_set, val_set)
    columns = {
        "multilevel": estimate_snn_energy(multi_trace, multi),
        "binary": estimate_snn_energy(binary_trace),
        "ann": estimate_ann_energy(multi, samples=len(val_set)),
    }
    ratios = {
        "multilevel/binary": compare_energy(columns["multilevel"], columns["binary"]),
        "multilevel/ann": compare_energy(columns["multilevel"], columns["ann"]),
    }
    print(breakdown_csv(columns, ratios))


if __name__ == "__main__":
    main()
