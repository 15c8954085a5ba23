"""``fed`` command line: train, eval, sweeps, ablations and artifact dumps.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 I/O failure,
4 checkpoint unreadable or not matching the configured architecture.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .augment import augment_pair
from .config import RunConfig, load_config
from .data import generate_dataset, generate_patch_set, write_ppm
from .errors import CheckpointError, ConfigurationError, FedError
from .evaluation import evaluate, write_metrics_csv, write_rankings
from .experiments import ABLATION_ROWS, DEFAULT_KS, ablate, make_split, sweep_k
from .model import load_inference_state
from .seeding import derive_seed, rng_for
from .training import build_model, train

log = logging.getLogger("fedreid")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CHECKPOINT = 0, 2, 3, 4


class UsageError(ConfigurationError):
    pass


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected 'on' or 'off', got {text!r}")
    return text == "on"


def _k_list(text: str) -> list[int]:
    try:
        ks = [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--k expects integers like 2,4,6,8; got {text!r}") from None
    if not ks:
        raise argparse.ArgumentTypeError("--k needs at least one value")
    return ks


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", type=Path, help="output directory (default runs/<command>-<run id>)")
    common.add_argument("--mse", type=_on_off, help="on|off: occlusion-score MSE terms")
    common.add_argument("--cross-camera-only", action="store_true",
                        help="drop same-identity same-camera gallery entries when scoring")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train and write checkpoint + loss CSV")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on held-out identities")
    p.add_argument("--checkpoint", type=Path, required=True)
    p = sub.add_parser("augment-preview", parents=[common], help="write an image, its occluded copy and mask")
    p.add_argument("--index", type=int, default=0, help="dataset sample to augment")
    p = sub.add_parser("inspect-scores", parents=[common], help="print OEM scores next to masks")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--count", type=int, default=8)
    p = sub.add_parser("sweep-k", parents=[common], help="train/evaluate once per memory-search K")
    p.add_argument("--k", type=_k_list, default=list(DEFAULT_KS), help="comma-separated K values")
    sub.add_parser("ablate", parents=[common], help="run the six component-ablation rows")
    sub.add_parser("dump-dataset", parents=[common], help="write the synthetic dataset as PPM files")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config is not None else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mse is not None:
        cfg.train.mse = args.mse
    if args.cross_camera_only:
        cfg.eval.cross_camera_only = True
    return cfg.validate()


def write_manifest(out: Path, args, cfg: RunConfig) -> dict:
    manifest = {
        "command": args.command,
        "config": None if args.config is None else str(args.config),
        "seed": cfg.seed,
        "out": str(out),
        "run_id": cfg.run_id(),
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "config.txt").write_text(cfg.dumps())
    return manifest


def load_model(cfg: RunConfig, path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model = build_model(cfg, cfg.data.ids)
    load_inference_state(model, checkpoint.load(path))
    return model


def write_rows(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


# --------------------------------------------------------------------------


def cmd_train(args, cfg, out: Path) -> None:
    split = make_split(cfg)
    res = train(split.train, cfg, out)
    last = res.epochs[-1]
    print(f"epochs={len(res.epochs)} steps={last['step']} loss={last['l_total']:.4f} "
          f"checkpoint={out / 'model.fedc'}")


def cmd_eval(args, cfg, out: Path) -> None:
    model = load_model(cfg, args.checkpoint)
    split = make_split(cfg)
    result = evaluate(model, split.query, split.gallery, cfg.eval.cross_camera_only)
    m = result.metrics()
    write_metrics_csv(out / "metrics.csv", m)
    write_rankings(out / "rankings.csv", result, [s.identity for s in split.query],
                   [s.identity for s in split.gallery])
    print(f"rank1={m['rank1']:.4f} map={m['map']:.4f}")


def _preview_pairs(cfg: RunConfig, count: int, start: int = 0):
    d = cfg.data
    samples = generate_dataset(d.ids + d.eval_ids, d.per_id, cfg.encoder.height, cfg.encoder.width, cfg.seed)
    if not 0 <= start < len(samples):
        raise UsageError(f"--index {start} outside [0, {len(samples)})")
    patches = generate_patch_set(d.patches, derive_seed(cfg.seed, "preview-patches"))
    rng = rng_for(cfg.seed, "preview", start)
    chosen = [samples[(start + i) % len(samples)] for i in range(count)]
    return [(s, augment_pair(s.image, patches, rng)) for s in chosen]


def cmd_augment_preview(args, cfg, out: Path) -> None:
    (sample, pair), = _preview_pairs(cfg, 1, args.index)
    write_ppm(out / "x.ppm", pair.original)
    write_ppm(out / "x_occluded.ppm", pair.occluded)
    line = " ".join(str(int(m)) for m in pair.mask)
    (out / "mask.txt").write_text(line + "\n")
    print(f"identity={sample.identity} orientation={pair.orientation} mask={line}")


def cmd_inspect_scores(args, cfg, out: Path) -> None:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    model = load_model(cfg, args.checkpoint)
    pairs = _preview_pairs(cfg, args.count)
    scores = model.features(np.stack([p.occluded for _, p in pairs])).scores.data
    rows = []
    for i, ((sample, pair), s) in enumerate(zip(pairs, scores)):
        rows.append({"image": i, "identity": sample.identity, "orientation": pair.orientation,
                     **{f"s{j + 1}": float(s[j]) for j in range(4)},
                     **{f"m{j + 1}": int(pair.mask[j]) for j in range(4)}})
        print(f"{i:3d} scores {' '.join(f'{v:.3f}' for v in s)}  mask {' '.join(str(int(m)) for m in pair.mask)}")
    write_rows(out / "scores.csv", rows, list(rows[0]))


def cmd_sweep_k(args, cfg, out: Path) -> None:
    for k in args.k:
        if not 1 <= k < cfg.data.ids:
            raise UsageError(f"--k value {k} must lie in [1, data.ids={cfg.data.ids})")
    rows = sweep_k(cfg, args.k, out)
    write_rows(out / "k_sweep.csv", rows, ["k", "rank1", "rank5", "rank10", "map"])
    for r in rows:
        print(f"K={r['k']} rank1={r['rank1']:.4f} map={r['map']:.4f}")


def cmd_ablate(args, cfg, out: Path) -> None:
    rows = ablate(cfg, out_dir=out)
    for r in rows:
        _, re, npo, oem, fdm = ABLATION_ROWS[r["row"]]
        r.update(re=int(re), npo=int(npo), oem=int(oem), fdm=int(fdm))
    write_rows(out / "ablation.csv", rows, ["row", "name", "re", "npo", "oem", "fdm", "rank1", "map"])
    for r in rows:
        print(f"{r['row']} {r['name']:<9} rank1={r['rank1']:.4f} map={r['map']:.4f}")


def cmd_dump_dataset(args, cfg, out: Path) -> None:
    d = cfg.data
    samples = generate_dataset(d.ids + d.eval_ids, d.per_id, cfg.encoder.height, cfg.encoder.width, cfg.seed)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in samples:
        name = f"{s.index:05d}_id{s.identity:03d}_c{s.camera}.ppm"
        write_ppm(img_dir / name, s.image)
        rows.append({"index": s.index, "identity": s.identity, "camera": s.camera, "file": f"images/{name}"})
    write_rows(out / "index.csv", rows, ["index", "identity", "camera", "file"])
    print(f"wrote {len(samples)} images to {img_dir}")


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "augment-preview": cmd_augment_preview,
    "inspect-scores": cmd_inspect_scores,
    "sweep-k": cmd_sweep_k,
    "ablate": cmd_ablate,
    "dump-dataset": cmd_dump_dataset,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports its own message
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = args.out or Path("runs") / f"{args.command}-{cfg.run_id()}"
        write_manifest(out, args, cfg)
        COMMANDS[args.command](args, cfg, out)
    except ConfigurationError as exc:
        print(f"fed: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"fed: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except OSError as exc:
        print(f"fed: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FedError as exc:
        print(f"fed: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
