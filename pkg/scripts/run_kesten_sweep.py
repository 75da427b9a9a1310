#!/usr/bin/env python3
"""Sweep the pinched-norm experiment over n and matrix dimension.

Writes one CSV row per (n, dim, trial) and prints a per-setting summary.
Dimensions default to the smallest multiple of n at or above each base size.

    python3 scripts/run_kesten_sweep.py --base-dims 128,512 --trials 20 --seed 1
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from pavelab import freeness as fr
from pavelab import serialize as ser


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-values", default="2,3,4,5")
    ap.add_argument("--base-dims", default="128,512")
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--slack", type=float, default=0.05)
    ap.add_argument("--out", default="kesten_sweep.csv")
    args = ap.parse_args()

    rows = []
    for n in (int(v) for v in args.n_values.split(",")):
        for base in (int(v) for v in args.base_dims.split(",")):
            dim = ((base + n - 1) // n) * n
            exp = fr.KestenExperiment(n=n, dim=dim, trials=args.trials,
                                      seed=args.seed, slack=args.slack)
            res = fr.run_kesten(exp)
            print(f"n={n} dim={dim}: max={res.max_norm:.4f} "
                  f"mean={res.mean_norm:.4f} bound={res.bound:.4f} "
                  f"exceedances={res.exceedances}")
            for t, norm in enumerate(res.norms):
                rows.append([n, dim, t, repr(float(norm)), repr(res.bound), ""])
    ser.write_csv(args.out, ["n", "dim", "trial", "norm", "bound", "defect"], rows)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
