"""Cost-optimal (n_h, n_kv) over a grid of target losses and context lengths.

Fits curves from the synthetic loss records (or loads a curve document), runs
the sweep, and prints the winner matrix and the N* matrix.

    python scripts/sweep_demo.py [--curves fixtures/calibrated_curves.json]
                                 [--lambda 0.9] [--objective z]
"""

import argparse
from pathlib import Path

from gqaopt import io
from gqaopt.config import default_family
from gqaopt.costs import HardwareCostParams, Objective
from gqaopt.scaling import fit_all
from gqaopt.search import monotone_violations, sweep

LOSSES = [3.0, 2.9, 2.8, 2.7, 2.6, 2.5, 2.4, 2.35]
CONTEXTS = [8192, 16384, 32768, 65536, 131072]
ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--records", default=ROOT / "fixtures" / "records_synthetic.csv")
    ap.add_argument("--curves", help="use a curve document instead of fitting")
    ap.add_argument("--lambda", dest="lam", type=float, default=0.9)
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--beta", type=float, default=1 / 3)
    ap.add_argument("--objective", choices=[o.value for o in Objective], default="z")
    args = ap.parse_args()

    if args.curves:
        curves = io.read_curves(args.curves)
    else:
        curves, failures = fit_all(io.read_records(args.records), chinchilla=True)
        print(f"fitted {len(curves)} curves ({len(failures)} skipped)")
    grid = sweep(LOSSES, CONTEXTS, curves, default_family(),
                 HardwareCostParams(args.lam, args.alpha, args.beta), Objective(args.objective))
    doc = io.sweep_to_dict(grid)
    print("\nwinning (n_h, n_kv):")
    print(io.render_matrix(doc), end="")
    print("\nN* (non-embedding parameters):")
    print(io.render_size_matrix(doc), end="")
    violations = monotone_violations(grid)
    print(f"\nmonotone pattern violations: {len(violations)}")
    for v in violations:
        print("  ", v)


if __name__ == "__main__":
    main()
