"""Single-query retrieval: embeddings, cosine ranking, CMC and mAP."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Sample
from .errors import ProtocolError


@dataclass
class EmbeddingIndex:
    vectors: np.ndarray  # (count, N*c)
    ids: np.ndarray
    cameras: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class RankingResult:
    rankings: list[np.ndarray]  # per query, gallery indices best first (junk removed)
    cmc: np.ndarray  # cmc[k-1] = Rank-k accuracy
    map: float
    ap: np.ndarray

    def rank(self, k: int) -> float:
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    def metrics(self) -> dict[str, float]:
        return {"rank1": self.rank(1), "rank5": self.rank(5), "rank10": self.rank(10), "map": float(self.map)}


def embed(samples: Sequence[Sample], model, chunk: int = 64) -> EmbeddingIndex:
    vecs = []
    for i in range(0, len(samples), chunk):
        imgs = np.stack([s.image for s in samples[i:i + chunk]])
        vecs.append(model.embed(imgs))
    return EmbeddingIndex(np.concatenate(vecs) if vecs else np.zeros((0, 0), np.float32),
                          np.array([s.identity for s in samples]),
                          np.array([s.camera for s in samples]))


def _unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-12)


def rank(query: np.ndarray, gallery) -> np.ndarray:
    """Gallery indices by descending cosine similarity; ties keep gallery order."""
    g = gallery.vectors if isinstance(gallery, EmbeddingIndex) else gallery
    sim = _unit(g) @ _unit(query)
    return np.argsort(-sim, kind="stable")


def rank_all(queries: EmbeddingIndex, gallery: EmbeddingIndex) -> list[np.ndarray]:
    sim = _unit(queries.vectors) @ _unit(gallery.vectors).T
    return [np.argsort(-row, kind="stable") for row in sim]


def cmc_map(rankings: Sequence[np.ndarray], query_ids, gallery_ids,
            query_cams=None, gallery_cams=None, cross_camera_only: bool = False) -> RankingResult:
    """Rank-k accuracy and mean average precision.

    With ``cross_camera_only`` gallery entries sharing both identity and camera
    with the query are dropped before scoring.
    """
    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)
    n_gal = len(gallery_ids)
    hits = np.zeros(max(n_gal, 1))
    aps, kept = [], []
    for qi, order in enumerate(rankings):
        order = np.asarray(order)
        qid = query_ids[qi]
        if cross_camera_only:
            junk = (gallery_ids[order] == qid) & (np.asarray(gallery_cams)[order] == query_cams[qi])
            order = order[~junk]
        match = gallery_ids[order] == qid
        if not match.any():
            raise ProtocolError(f"query {qi} (identity {qid}) has no gallery match")
        positions = np.flatnonzero(match)
        hits[positions[0]:] += 1
        precision = np.arange(1, len(positions) + 1) / (positions + 1)
        aps.append(precision.mean())
        kept.append(order)
    nq = len(kept)
    cmc = hits / nq if nq else hits
    ap = np.array(aps)
    return RankingResult(kept, cmc[:n_gal], float(ap.mean()) if nq else 0.0, ap)


def evaluate(model, query: Sequence[Sample], gallery: Sequence[Sample],
             cross_camera_only: bool = False) -> RankingResult:
    qi = embed(query, model)
    gi = embed(gallery, model)
    return cmc_map(rank_all(qi, gi), qi.ids, gi.ids, qi.cameras, gi.cameras, cross_camera_only)


def write_metrics_csv(path, metrics: dict[str, float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k in ("rank1", "rank5", "rank10", "map"):
            w.writerow([k, repr(float(metrics[k]))])


def write_rankings(path, result: RankingResult, query_ids, gallery_ids, top: int = 10) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query", "query_id", "ap", "ranked_gallery", "ranked_ids"])
        for qi, order in enumerate(result.rankings):
            head = order[:top]
            w.writerow([qi, int(query_ids[qi]), repr(float(result.ap[qi])),
                        " ".join(map(str, head)), " ".join(str(int(gallery_ids[j])) for j in head)])
