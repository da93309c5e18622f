"""Show how events multiply through stacked SEW residual blocks.

Each SEW block adds its branch output to the identity shortcut, so a
pass-through block doubles the number of nonzero events it emits. The
measured counts from an identity-kernel network are printed next to the
closed-form prediction.
"""

import numpy as np

from mlsnn import autograd as ag
from mlsnn.network import build_model
from mlsnn.profiler import avalanche_predict


def identity_network(depth, T, size):
    layers = [{"kind": "neuron"}]
    layers += [{"kind": "residual_block", "out_channels": 1} for _ in range(depth)]
    layers += [{"kind": "linear", "out_features": 2}]
    model = build_model({"input_shape": [1, size, size], "num_classes": 2, "T": T, "N": 1,
                         "variant": "sew", "batchnorm": False, "layers": layers})
    for block in model.blocks:
        for conv in (block.conv1, block.conv2):
            conv.w.data[...] = 0
            conv.w.data[0, 0, 1, 1] = 1
            conv.b.data[...] = 0
    return model


def main():
    depth, T, size = 4, 8, 6
    model = identity_network(depth, T, size)
    x = np.zeros((T, 1, 1, size, size), dtype=np.float32)
    x[0, 0, 0, 2, 1:5] = 1.0
    with ag.no_grad():
        _, trace = model.eval().forward(x)
    gamma = trace.layer("neuron0").total
    print("depth  measured  predicted")
    print(f"{0:5d}  {gamma:8d}  {avalanche_predict(gamma, 0):9d}")
    for d in range(1, depth + 1):
        print(f"{d:5d}  {trace.layer(f'sum_{d - 1}').total:8d}  {avalanche_predict(gamma, d):9d}")


if __name__ == "__main__":
    main()
