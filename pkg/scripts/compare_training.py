"""Train the merge-at-flatten and symmetrized-input networks from the same
initial kernels and print how far their learned parameters drift apart.

Reports only; whether the two end up close is left open.
"""
import argparse

import numpy as np

from ticnn import arch, train
from ticnn.tensor import random_tensor


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family", default="dih4")
    args = p.parse_args()

    side = 12
    spec = arch.random_spec(side, [dict(out_channels=3, kernel=3, activation="tanh", pooling="avg"),
                                   dict(out_channels=2, kernel=3, activation="tanh")],
                            seed=args.seed, family=args.family, nodes=4, head_dims=(2,))
    data = [(random_tensor((1, side, side), args.seed + i), random_tensor((2,), args.seed + 1000 + i))
            for i in range(args.samples)]
    cfg = train.TrainConfig(learning_rate=args.lr, steps=args.steps, check_identity=False)
    runs = {v: train.sgd_train(spec, v, data, cfg) for v in ("ti21", "ti22")}
    for v, r in runs.items():
        print(f"{v}: loss {r.losses[0]:.4f} -> {r.losses[-1]:.4f}")
    a, b = runs["ti21"].spec, runs["ti22"].spec
    for h, (la, lb) in enumerate(zip(a.layers, b.layers)):
        rel = np.linalg.norm(la.kernels - lb.kernels) / np.linalg.norm(lb.kernels)
        print(f"conv{h}: relative kernel distance {rel:.3e}")
    rel = np.linalg.norm(a.flatten - b.flatten) / np.linalg.norm(b.flatten)
    print(f"flatten: relative distance {rel:.3e}")


if __name__ == "__main__":
    main()
