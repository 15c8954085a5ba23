"""Occlusion scores on occluded versus visible stripes after training the full model.

    python3 scripts/run_oem_scores.py --seeds 0 1 2
"""

import argparse
import statistics
from pathlib import Path

from fedreid.config import RunConfig, load_config
from fedreid.experiments import make_split, occlusion_score_gap
from fedreid.training import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    base = load_config(args.config) if args.config else RunConfig()

    gaps = []
    for seed in args.seeds:
        cfg = base.replace(seed=seed)
        split = make_split(cfg)
        model = train(split.train, cfg).model
        s = occlusion_score_gap(model, split.gallery, seed)
        gaps.append(s["visible"] - s["occluded"])
        print(f"seed {seed} occluded={s['occluded']:.3f} (n={s['n_occluded']}) "
              f"visible={s['visible']:.3f} (n={s['n_visible']})", flush=True)
    print(f"median visible - occluded = {statistics.median(gaps):.3f}")


if __name__ == "__main__":
    main()
