"""Rank-1 and mAP of the full model as the number of diffused identities K varies.

    python3 scripts/run_k_sweep.py --k 2 4 6 8 --seeds 0 1 2
"""

import argparse
import statistics
from pathlib import Path

from fedreid.config import RunConfig, load_config
from fedreid.experiments import DEFAULT_KS, sweep_k


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path)
    ap.add_argument("--k", type=int, nargs="+", default=list(DEFAULT_KS))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    base = load_config(args.config) if args.config else RunConfig()

    by_k = {k: [] for k in args.k}
    for seed in args.seeds:
        out = None if args.out is None else args.out / f"seed{seed}"
        for r in sweep_k(base.replace(seed=seed), args.k, out):
            by_k[r["k"]].append(r)
            print(f"seed {seed} K={r['k']} rank1={r['rank1']:.3f} map={r['map']:.3f}", flush=True)
    print("\nmedian over seeds")
    for k, rows in by_k.items():
        print(f"K={k} rank1={statistics.median(r['rank1'] for r in rows):.3f} "
              f"map={statistics.median(r['map'] for r in rows):.3f}")


if __name__ == "__main__":
    main()
