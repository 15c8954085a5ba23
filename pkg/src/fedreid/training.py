"""Two-branch FED training: loss assembly, SGD with cosine decay, PK sampling."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .augment import augment_pair, common_augment, random_erase
from .config import RunConfig, TrainConfig
from .data import OcclusionPatch, Sample, generate_patch_set
from .errors import ContractError, SamplerError, StateError
from .memory import FDM_TAG, OEM_TAG, MemoryBank, contrastive_loss, init_bank, update_bank
from .model import FedModel
from .numerics import Parameter, Tape, Tensor
from .oem import mse_loss
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

CSV_HEADER = ("epoch", "step", "lr", "l_total", "l_mse", "l_id", "l_c")
GROUPS = ("mse", "id", "c")


def id_loss(feature: Tensor, head, labels) -> Tensor:
    """Cross-entropy of a linear identity head (mean over the batch)."""
    weight = head.weight if hasattr(head, "weight") else head
    labels = np.atleast_1d(labels)
    if feature.ndim == 1:
        feature = feature.reshape(1, -1)
    k = weight.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"label outside [0, {k})")
    return nx.cross_entropy(nx.matmul(feature, weight), labels)


def batch_hard_triplet(features: Tensor, labels, margin: float = 0.3) -> Tensor:
    """Batch-hard triplet loss on Euclidean distances; mining uses detached distances."""
    labels = np.asarray(labels)
    f = features.data.astype(np.float64)
    dist = np.sqrt(np.maximum(((f[:, None, :] - f[None, :, :]) ** 2).sum(-1), 1e-12))
    same = labels[:, None] == labels[None, :]
    pos = np.where(same, dist, -np.inf).argmax(axis=1)
    neg = np.where(same, np.inf, dist).argmin(axis=1)

    def distance(idx):
        diff = features - features[idx]
        return nx.sqrt(nx.tsum(nx.square(diff), axis=1) + 1e-12)

    return nx.mean(nx.relu(distance(pos) - distance(neg) + margin))


# --------------------------------------------------------------------------


class SGD:
    """Momentum SGD with coupled weight decay."""

    def __init__(self, params: Sequence[Parameter], momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = [p for p in params if p.trainable]
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            buf = self.buffers.get(p.name)
            buf = g if buf is None else self.momentum * buf + g
            self.buffers[p.name] = buf
            p.data = (p.data - lr * buf).astype(p.dtype)


def cosine_lr(step: int, total: int, base: float, floor: float = 0.0) -> float:
    """Decays from ``base`` at step 0 to ``floor`` at step ``total - 1``."""
    if total <= 1:
        return base
    t = min(step, total - 1) / (total - 1)
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * t))


def pk_batches(labels: Sequence[int], p: int, s: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of P-identities x S-samples batches.

    Each identity's shuffled samples are cut into chunks of S (remainder
    dropped); batches draw one chunk from each of P distinct identities
    until fewer than P identities have chunks left.
    """
    labels = np.asarray(labels)
    chunks: dict[int, list[np.ndarray]] = {}
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        if idx.size < s:
            raise SamplerError(f"identity {int(k)} has {idx.size} samples; need {s}")
        idx = rng.permutation(idx)
        chunks[int(k)] = [idx[i:i + s] for i in range(0, idx.size - s + 1, s)]
    if len(chunks) < p:
        raise SamplerError(f"{len(chunks)} identities cannot fill batches of {p}")
    batches = []
    while True:
        live = sorted(k for k, c in chunks.items() if c)
        if len(live) < p:
            break
        pick = rng.choice(live, size=p, replace=False)
        batches.append(np.concatenate([chunks[int(k)].pop() for k in pick]))
    return batches


# --------------------------------------------------------------------------


@dataclass
class LossBreakdown:
    terms: dict[str, float]
    groups: dict[str, str]  # term name -> "mse" | "id" | "c"
    weights: dict[str, float]  # group -> weight applied to the group's sum
    total: float
    lr: float = 0.0

    def group_sum(self, group: str) -> float:
        return float(sum(v for k, v in self.terms.items() if self.groups[k] == group))

    def recompose(self) -> float:
        return float(sum(self.weights[g] * self.group_sum(g) for g in GROUPS))

    def counts(self) -> dict[str, int]:
        return {g: sum(1 for k in self.terms if self.groups[k] == g) for g in GROUPS}


def _combine(terms: dict[str, Tensor], groups: dict[str, str], norm: str):
    counts = {g: sum(1 for k in terms if groups[k] == g) for g in GROUPS}
    weights = {g: (0.5 if norm == "half" else (1.0 / counts[g] if counts[g] else 0.0)) for g in GROUPS}
    total = None
    for g in GROUPS:
        for name, t in terms.items():
            if groups[name] != g:
                continue
            part = nx.cast(t, np.float64) * weights[g]
            total = part if total is None else total + part
    return total, weights


@dataclass
class TrainState:
    model: FedModel
    banks: dict[str, MemoryBank]
    optimizer: SGD
    patch_set: list[OcclusionPatch]
    rng: np.random.Generator
    cfg: TrainConfig
    k: int


def prepare_images(images: np.ndarray, st: TrainState):
    """Common augmentation (+ random erasing), then NPO pairs when enabled."""
    cfg, rng = st.cfg, st.rng
    hol, occ, masks = [], [], []
    for x in images:
        x = common_augment(x, rng)
        if cfg.random_erase:
            x = random_erase(x, rng)
        hol.append(x)
        if cfg.use_npo:
            pair = augment_pair(x, st.patch_set, rng)
            occ.append(pair.occluded)
            masks.append(pair.mask)
    hol = np.stack(hol)
    if not cfg.use_npo:
        return hol, None, None
    return hol, np.stack(occ), np.stack(masks)


def train_step(images: np.ndarray, labels: np.ndarray, st: TrainState, lr: float) -> LossBreakdown:
    cfg, model = st.cfg, st.model
    if cfg.use_npo and (OEM_TAG not in st.banks or (cfg.use_fdm and FDM_TAG not in st.banks)):
        raise StateError("memory banks are not initialised")
    labels = np.asarray(labels)
    B = len(labels)
    hol, occ, masks = prepare_images(images, st)
    branches = [("h", slice(0, B))]
    batch = hol
    if occ is not None:
        batch = np.concatenate([hol, occ])
        branches.append(("o", slice(B, 2 * B)))

    terms: dict[str, Tensor] = {}
    groups: dict[str, str] = {}

    def put(name, group, value):
        terms[name] = value
        groups[name] = group

    st.optimizer.zero_grad()
    with Tape() as tape:
        feats = model.features(batch)
        flat = feats.flat
        fdm_out = {}
        for tag, sl in branches:
            scores = feats.scores[sl]
            f = flat[sl]
            if cfg.use_oem and cfg.mse:
                target = np.ones((B, 4), np.float32) if tag == "h" else masks
                put(f"mse_{tag}", "mse", mse_loss(scores, target))
            put(f"id_cls_{tag}", "id", id_loss(feats.cls[sl], model.heads.cls, labels))
            put(f"id_oem_{tag}", "id", id_loss(f, model.heads.oem, labels))
            if cfg.use_npo:
                put(f"c_oem_{tag}", "c", contrastive_loss(f, st.banks[OEM_TAG], labels, cfg.tau,
                                                          cfg.contrastive_norm))
            if cfg.use_fdm:
                fd = model.fdm(f, scores, st.banks[OEM_TAG], labels, st.k)
                fdm_out[tag] = fd
                put(f"id_fdm_{tag}", "id", id_loss(fd, model.heads.fdm, labels))
                put(f"c_fdm_{tag}", "c", contrastive_loss(fd, st.banks[FDM_TAG], labels, cfg.tau,
                                                          cfg.contrastive_norm))
            if cfg.triplet and tag == "h":
                put("triplet_h", "c", batch_hard_triplet(f, labels, cfg.triplet_margin))
        total, weights = _combine(terms, groups, cfg.loss_norm)
        tape.backward(total)
    st.optimizer.step(lr)

    if cfg.use_npo:
        update_bank(st.banks[OEM_TAG], flat.data[:B], labels)
        if cfg.use_fdm:
            update_bank(st.banks[FDM_TAG], fdm_out["h"].data, labels)
    return LossBreakdown({k: float(v.data) for k, v in terms.items()}, groups, weights,
                         float(total.data), lr)


# --------------------------------------------------------------------------


def build_model(cfg: RunConfig, num_ids: int) -> FedModel:
    return FedModel(cfg.encoder, cfg.fdm, num_ids, rng_for(cfg.seed, "model"), use_oem=cfg.train.use_oem)


def stack_images(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([s.image for s in samples]).astype(np.float32)


def init_banks(model: FedModel, samples: Sequence[Sample], cfg: RunConfig, chunk: int = 64) -> dict[str, MemoryBank]:
    """One full forward pass over the (un-augmented) training set."""
    tc = cfg.train
    labels = np.array([s.identity for s in samples])
    flats, scores = [], []
    for i in range(0, len(samples), chunk):
        feats = model.features(stack_images(samples[i:i + chunk]))
        flats.append(feats.flat.data)
        scores.append(feats.scores.data)
    flat = np.concatenate(flats)
    score = np.concatenate(scores)
    by_id = {int(k): flat[labels == k] for k in np.unique(labels)}
    banks = {OEM_TAG: init_bank(by_id, model.num_ids, tc.bank_momentum, OEM_TAG)}
    if tc.use_fdm:
        outs = []
        for i in range(0, len(samples), chunk):
            sl = slice(i, i + chunk)
            fd = model.fdm(Tensor(flat[sl]), Tensor(score[sl]), banks[OEM_TAG], labels[sl], cfg.fdm.k)
            outs.append(fd.data)
        fd_all = np.concatenate(outs)
        banks[FDM_TAG] = init_bank({int(k): fd_all[labels == k] for k in np.unique(labels)},
                                   model.num_ids, tc.bank_momentum, FDM_TAG)
    return banks


@dataclass
class TrainResult:
    model: FedModel
    banks: dict[str, MemoryBank]
    steps: list[LossBreakdown] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)


def train(samples: Sequence[Sample], cfg: RunConfig, out_dir=None, on_step=None) -> TrainResult:
    """Train on ``samples`` (labels must be 0..IDs-1); optionally write checkpoint and loss CSV."""
    if not samples:
        raise ContractError("empty training set")
    cfg.validate()
    tc = cfg.train
    labels = np.array([s.identity for s in samples])
    num_ids = int(labels.max()) + 1
    if set(np.unique(labels)) != set(range(num_ids)):
        raise ContractError("training labels must be contiguous from 0")
    model = build_model(cfg, num_ids)
    banks = init_banks(model, samples, cfg) if tc.use_npo else {}
    patches = generate_patch_set(cfg.data.patches, derive_seed(cfg.seed, "train-patches"))
    st = TrainState(model, banks, SGD(list(model.parameters()), tc.momentum, tc.weight_decay),
                    patches, rng_for(cfg.seed, "augment"), tc, cfg.fdm.k)
    sampler_rng = rng_for(cfg.seed, "sampler")
    plan = [pk_batches(labels, tc.p_ids, tc.s_per_id, sampler_rng) for _ in range(tc.epochs)]
    total_steps = sum(len(b) for b in plan)
    images = stack_images(samples)
    result = TrainResult(model, banks)
    step = 0
    for epoch, batches in enumerate(plan, 1):
        rows = []
        for idx in batches:
            lr = cosine_lr(step, total_steps, tc.lr, tc.min_lr)
            bd = train_step(images[idx], labels[idx], st, lr)
            rows.append(bd)
            result.steps.append(bd)
            log.debug("step %d %s", step, " ".join(f"{k}={v:.5f}" for k, v in sorted(bd.terms.items())))
            if on_step is not None:
                on_step(epoch, step, bd)
            step += 1
        summary = {
            "epoch": epoch, "step": step, "lr": rows[-1].lr if rows else 0.0,
            "l_total": float(np.mean([r.total for r in rows])),
            "l_mse": float(np.mean([r.group_sum("mse") for r in rows])),
            "l_id": float(np.mean([r.group_sum("id") for r in rows])),
            "l_c": float(np.mean([r.group_sum("c") for r in rows])),
        }
        result.epochs.append(summary)
        log.info("epoch %d step %d loss %.4f", epoch, step, summary["l_total"])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        model.save(out / "model.fedc", banks)
        write_loss_csv(out / "losses.csv", result.epochs)
    return result


def write_loss_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r["epoch"], r["step"], repr(r["lr"]), repr(r["l_total"]),
                        repr(r["l_mse"]), repr(r["l_id"]), repr(r["l_c"])])
