"""Identity-center memory banks, memory search and the contrastive loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError, ContractError, InitializationError
from .numerics import Tensor

OEM_TAG = "oem"
FDM_TAG = "fdm"


@dataclass
class MemoryBank:
    centers: np.ndarray  # (IDs, N*c) float32
    momentum: float = 0.2
    tag: str = OEM_TAG

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def checkpoint_name(self) -> str:
        return f"memory.{self.tag}.centers"


def init_bank(features_by_id: dict[int, list], num_ids: int | None = None,
              momentum: float = 0.2, tag: str = OEM_TAG) -> MemoryBank:
    """Center k = mean of identity k's features; identities must be 0..IDs-1."""
    if num_ids is None:
        num_ids = max(features_by_id) + 1 if features_by_id else 0
    missing = [k for k in range(num_ids) if not len(features_by_id.get(k, ()))]
    if missing or num_ids == 0:
        raise InitializationError(f"no features for identity {missing[0] if missing else 0}")
    rows = [np.mean(np.asarray(features_by_id[k], dtype=np.float64), axis=0) for k in range(num_ids)]
    return MemoryBank(np.stack(rows).astype(np.float32), momentum, tag)


def update_bank(bank: MemoryBank, features: np.ndarray, ids) -> MemoryBank:
    """c_k <- m c_k + (1 - m) mean(B_k) for every identity k present in the batch (in place)."""
    feats = np.asarray(features, dtype=np.float64)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= bank.size):
        bad = int(ids[(ids < 0) | (ids >= bank.size)][0])
        raise ContractError(f"identity {bad} not in bank of {bank.size}")
    m = bank.momentum
    for k in np.unique(ids):
        batch_mean = feats[ids == k].mean(axis=0)
        bank.centers[k] = (m * bank.centers[k].astype(np.float64) + (1.0 - m) * batch_mean).astype(np.float32)
    return bank


def cosine_similarity(query: np.ndarray, centers: np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    qn = q / np.maximum(np.linalg.norm(q, axis=-1, keepdims=True), 1e-12)
    cn = c / np.maximum(np.linalg.norm(c, axis=-1, keepdims=True), 1e-12)
    return qn @ cn.T


def search_memory(bank: MemoryBank, query: np.ndarray, query_ids, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other-identity centers by cosine distance.

    Accepts one vector (returns (k,)) or a batch (returns (B, k)).  Ties go to
    the lower identity index.
    """
    if k < 1 or k >= bank.size:
        raise ConfigurationError(f"K={k} must lie in [1, {bank.size - 1}] for a bank of {bank.size}")
    single = np.ndim(query) == 1
    q = np.atleast_2d(query)
    qids = np.atleast_1d(np.asarray(query_ids, dtype=np.int64))
    sim = cosine_similarity(q, bank.centers)
    sim[np.arange(len(qids)), qids] = -np.inf
    order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    return order[0] if single else order


def contrastive_loss(f: Tensor, bank: MemoryBank, ids, tau: float = 0.05, normalize: bool = False) -> Tensor:
    """Mean over the batch of -log softmax(<f, c_j> / tau)[id].

    Centers are constants.  With ``normalize`` both sides are L2-normalised so
    the inner product becomes a cosine similarity.
    """
    if tau <= 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")
    if f.ndim == 1:
        f = f.reshape(1, -1)
    centers = bank.centers
    if normalize:
        f = nx.l2_normalize(f)
        centers = centers / (np.linalg.norm(centers, axis=1, keepdims=True) + 1e-12)
    logits = nx.matmul(f, Tensor(centers.T, dtype=f.dtype)) * (1.0 / tau)
    return nx.cross_entropy(logits, np.atleast_1d(ids))
