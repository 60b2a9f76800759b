"""Loss vs. head count: fit ``a * n_h**b + c`` at three model sizes and a shared-asymptote group.

Regenerates each curve noiselessly on n_h in {1, ..., 128}, refits it, and
prints recovered coefficients next to the generating ones.

    python scripts/head_law_demo.py [--noise 0.002] [--seed 0]
"""

import argparse

import numpy as np

from gqaopt.scaling import fit_head_law_arrays, joint_fit_arrays

HEADS = 2.0 ** np.arange(8)
SINGLE = {"470M": (0.579, -0.124, 2.473), "680M": (0.398, -0.177, 2.583),
          "1.2B": (0.301, -0.227, 2.622)}
SHARED_C = 1.53
BY_CONTEXT = {1024: (1.513, -0.039), 2048: (1.436, -0.041), 8192: (1.356, -0.044)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--noise", type=float, default=0.0, help="multiplicative loss noise (std)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    def sample(a, b, c):
        y = a * HEADS ** b + c
        return y * (1 + args.noise * rng.standard_normal(y.shape))

    print(f"{'curve':>8} {'a':>16} {'b':>16} {'c':>16} {'R^2':>12}")
    for name, (a, b, c) in SINGLE.items():
        curve, diag = fit_head_law_arrays(HEADS, sample(a, b, c))
        print(f"{name:>8} {curve.a:8.4f} ({a:5.3f}) {curve.b:8.4f} ({b:6.3f}) "
              f"{curve.c:8.4f} ({c:5.3f}) {diag.r_squared:12.9f}")

    joint = joint_fit_arrays([(HEADS, sample(a, b, SHARED_C)) for a, b in BY_CONTEXT.values()])
    print(f"\nshared asymptote: {joint.c:.4f} (generated with {SHARED_C})"
          f"{'  [flagged: poor fit]' if joint.flagged else ''}")
    for (T, (a, b)), curve, diag in zip(BY_CONTEXT.items(), joint.curves, joint.diagnostics):
        print(f"  T={T:>5}: a={curve.a:.4f} ({a}) b={curve.b:.4f} ({b}) R^2={diag.r_squared:.9f}")


if __name__ == "__main__":
    main()
