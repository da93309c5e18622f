"""Print the staircase transfer function of a multi-level neuron.

With N levels and T timesteps the decoded output takes N*T + 1 distinct
values between 0 and 1; raising either knob refines the staircase.
"""

import numpy as np

from mlsnn.cli import quantscan


def main():
    for N, T in ((1, 1), (4, 1), (1, 4), (4, 2)):
        xs, decoded = quantscan(1.0, N, T, 0.0, 1.2, 600)
        levels = np.unique(decoded)
        print(f"N={N} T={T}: {len(levels)} output levels")
        for level in levels:
            first = xs[np.argmax(decoded == level)]
            print(f"    x >= {first:.3f} -> {level:.4f}")


if __name__ == "__main__":
    main()
