"""Compare gradient norms at residual-block taps for three block designs.

SEW and Sparse blocks trained with a straight-through barrier pass the
output gradient to both branches unchanged, so the three columns match.
A Sparse block with a surrogate barrier attenuates the gradient.
"""

import numpy as np

from mlsnn.data import synthetic_split
from mlsnn.network import build_model
from mlsnn.profiler import gradient_flow_report


def main():
    train_set, _ = synthetic_split(128, 0, seed=0)
    T = 2
    batches = [(train_set.encode(idx, T), train_set.labels[idx]) for idx in np.array_split(np.arange(128), 4)]
    for label, variant, barrier in (("sew", "sew", None), ("sparse+ste", "sparse", "ste"),
                                    ("sparse-ste", "sparse", "surrogate")):
        cfg = {"topology": "resnet-small", "T": T, "N": 4, "variant": variant}
        if barrier:
            cfg["barrier"] = {"backward": barrier}
        report = gradient_flow_report(build_model(cfg), batches, seeds=(0, 1, 2))
        print(label)
        for row in report.aggregate():
            print(f"    block {row['block']}: |dA|={row['norm_a_mean']:.3e} "
                  f"|dR|={row['norm_r_mean']:.3e} |dO|={row['norm_o_mean']:.3e}")


if __name__ == "__main__":
    main()
