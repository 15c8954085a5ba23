"""Experiment drivers shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import augment_pair
from .config import RunConfig
from .data import Sample, generate_dataset, generate_patch_set, split_query_gallery, training_subset
from .errors import ConfigurationError
from .evaluation import RankingResult, evaluate
from .seeding import derive_seed, rng_for
from .training import TrainResult, train

# (name, random erasing, NPO, OEM, FDM); rows 0 and 1 train with ID + triplet.
ABLATION_ROWS = (
    ("baseline", False, False, False, False),
    ("+RE", True, False, False, False),
    ("+NPO", False, True, False, False),
    ("+NPO+OEM", False, True, True, False),
    ("+NPO+FDM", False, True, False, True),
    ("FED", False, True, True, True),
)
DEFAULT_KS = (2, 4, 6, 8)


def worker_count(jobs: int) -> int:
    """Worker threads for ``jobs`` independent runs, capped by ``FED_THREADS``."""
    raw = os.environ.get("FED_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigurationError(f"FED_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(cap, jobs))


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Map in worker threads; results keep input order."""
    n = worker_count(len(items))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def ablation_config(cfg: RunConfig, row: int) -> RunConfig:
    _, re, npo, oem, fdm = ABLATION_ROWS[row]
    return cfg.replace(train={"random_erase": re, "use_npo": npo, "use_oem": oem,
                              "use_fdm": fdm, "triplet": not npo})


@dataclass
class Split:
    train: list[Sample]
    query: list[Sample]
    gallery: list[Sample]


def make_split(cfg: RunConfig) -> Split:
    """Training identities plus a held-out query/gallery split with occluded queries."""
    d = cfg.data
    samples = generate_dataset(d.ids + d.eval_ids, d.per_id, cfg.encoder.height, cfg.encoder.width, cfg.seed)
    patches = generate_patch_set(d.patches, derive_seed(cfg.seed, "eval-patches"))
    query, gallery = split_query_gallery(samples, d.eval_ids, cfg.eval.occlude_queries, patches, cfg.seed)
    return Split(training_subset(samples, d.eval_ids), query, gallery)


@dataclass
class RunOutcome:
    result: TrainResult
    ranking: RankingResult

    @property
    def metrics(self) -> dict[str, float]:
        return self.ranking.metrics()


def run(cfg: RunConfig, out_dir=None, split: Split | None = None) -> RunOutcome:
    """Train then evaluate on the held-out identities."""
    split = split or make_split(cfg)
    res = train(split.train, cfg, out_dir)
    ranking = evaluate(res.model, split.query, split.gallery, cfg.eval.cross_camera_only)
    return RunOutcome(res, ranking)


def ablate(cfg: RunConfig, rows: Sequence[int] = range(len(ABLATION_ROWS)), out_dir=None) -> list[dict]:
    """One train/eval per ablation row on identical data and seed."""
    split = make_split(cfg)

    def one(row):
        sub = None if out_dir is None else Path(out_dir) / f"row{row}"
        out = run(ablation_config(cfg, row), sub, split)
        return {"row": row, "name": ABLATION_ROWS[row][0], **out.metrics}

    return parallel_map(one, list(rows))


def sweep_k(cfg: RunConfig, ks: Sequence[int] = DEFAULT_KS, out_dir=None) -> list[dict]:
    for k in ks:
        if not 1 <= k < cfg.data.ids:
            raise ConfigurationError(f"K={k} must lie in [1, data.ids={cfg.data.ids})")
    split = make_split(cfg)

    def one(k):
        sub = None if out_dir is None else Path(out_dir) / f"k{k}"
        out = run(cfg.replace(fdm={"k": k}), sub, split)
        return {"k": k, **out.metrics}

    return parallel_map(one, list(ks))


def occlusion_score_gap(model, samples: Sequence[Sample], seed: int, copies: int = 4) -> dict[str, float]:
    """Mean OEM score on occluded (mask 0) versus visible (mask 1) stripes.

    Each sample is augmented ``copies`` times with a held-out patch set.
    """
    patches = generate_patch_set(30, derive_seed(seed, "score-patches"))
    rng = rng_for(seed, "score-batch")
    imgs, masks = [], []
    for s in samples:
        for _ in range(copies):
            pair = augment_pair(s.image, patches, rng)
            imgs.append(pair.occluded)
            masks.append(pair.mask)
    masks = np.stack(masks)
    scores = np.concatenate([model.features(np.stack(imgs[i:i + 64])).scores.data
                             for i in range(0, len(imgs), 64)])
    occluded = scores[masks == 0]
    visible = scores[masks == 1]
    return {"occluded": float(occluded.mean()) if occluded.size else float("nan"),
            "visible": float(visible.mean()) if visible.size else float("nan"),
            "n_occluded": int(occluded.size), "n_visible": int(visible.size)}

