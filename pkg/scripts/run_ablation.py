"""Ablation table over several seeds, with per-row medians and the ordering check.

    python3 scripts/run_ablation.py --seeds 0 1 2 --out runs/ablation
"""

import argparse
import csv
import statistics
import time
from pathlib import Path

from fedreid.config import RunConfig, load_config
from fedreid.experiments import ABLATION_ROWS, ablate


def ordering_holds(r1: dict[int, float]) -> bool:
    return r1[0] <= r1[2] <= r1[5] and r1[5] >= r1[3] and r1[5] >= r1[4]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", type=Path, default=Path("runs/ablation"))
    args = ap.parse_args()
    base = load_config(args.config) if args.config else RunConfig()
    args.out.mkdir(parents=True, exist_ok=True)

    table = []
    t0 = time.time()
    for seed in args.seeds:
        for r in ablate(base.replace(seed=seed), out_dir=args.out / f"seed{seed}"):
            table.append({"seed": seed, **r})
            print(f"seed {seed} {r['row']} {r['name']:<9} rank1={r['rank1']:.3f} map={r['map']:.3f}", flush=True)

    with open(args.out / "ablation_seeds.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["seed", "row", "name", "rank1", "rank5", "rank10", "map"], lineterminator="\n")
        w.writeheader()
        w.writerows(table)

    med = {}
    print("\nmedian over seeds")
    for row, (name, *_) in enumerate(ABLATION_ROWS):
        vals = [t for t in table if t["row"] == row]
        med[row] = statistics.median(t["rank1"] for t in vals)
        print(f"{row} {name:<9} rank1={med[row]:.3f} map={statistics.median(t['map'] for t in vals):.3f}")
    print(f"ordering {'holds' if ordering_holds(med) else 'violated'}; {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
