"""Regenerate the files under fixtures/ from the calibrated synthetic family.

    python scripts/make_fixtures.py [--noise 0.0] [--out fixtures]
"""

import argparse
from pathlib import Path

import numpy as np

from gqaopt import io
from gqaopt.config import default_family
from gqaopt.scaling import LossRecord
from gqaopt.synthetic import calibrated_curves, ladder_records


def head_law_records(a=0.579, b=-0.124, c=2.473, size=470e6, ctx=8192):
    """Loss vs. query heads at one model size (MHA ladder from 1 to 128 heads)."""
    out = []
    for n in 2 ** np.arange(8):
        h = int(n)
        from gqaopt.config import AttentionHeads
        out.append(LossRecord(AttentionHeads(h, h), size, size + 64e6, ctx, 20 * size,
                              float(a * h ** b + c), f"470M-h{h}", 24, 1280))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="fixtures")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(exist_ok=True)

    curves = calibrated_curves()
    io.write_curves(out / "calibrated_curves.json", curves)
    io.write_records(out / "records_synthetic.csv",
                     ladder_records(curves, noise=args.noise, seed=args.seed))
    io.write_records(out / "records_headlaw_470m.csv", head_law_records())
    io.write_family(out / "family_default.txt", default_family())
    (out / "align_configs.csv").write_text(
        "label,n_layers,hidden_size,n_heads,n_kv_heads\n"
        "nh32,36,2048,32,8\n"
        "nh16,36,2048,16,8\n"
        "nh8,36,2048,8,1\n")
    print(f"wrote fixtures to {out}/")


if __name__ == "__main__":
    main()
