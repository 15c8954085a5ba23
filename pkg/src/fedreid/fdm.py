"""Feature Diffusion Module: cross attention from part features to memory centers.

Train-time only.  ``f_d' = FFN2(gate * FFN1(f_d) + f')`` where ``f_d`` is the
attention readout over the K nearest other-identity centers and ``gate``
broadcasts each part's occlusion score over that part's channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoder import N_PARTS
from .errors import ConfigurationError, ContractError
from .layers import LayerNorm, Linear, Module
from .memory import MemoryBank, search_memory
from .numerics import Tensor


@dataclass
class FdmConfig:
    heads: int = 8
    k: int = 8
    hidden_ratio: int = 2


class PostNormFFN(Module):
    """``fc2(relu(fc1(LN(x))))``; callers add the residual into ``x`` first."""

    def __init__(self, name: str, dim: int, hidden: int, rng):
        self.norm = LayerNorm(f"{name}.norm", dim)
        self.fc1 = Linear(f"{name}.fc1", dim, hidden, rng)
        self.fc2 = Linear(f"{name}.fc2", hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(nx.relu(self.fc1(self.norm(x))))


class CrossAttention(Module):
    def __init__(self, name: str, dim: int, heads: int, rng):
        if dim % heads:
            raise ConfigurationError(f"FDM dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.w_q = Linear(f"{name}.w_q", dim, dim, rng, bias=False)
        self.w_k = Linear(f"{name}.w_k", dim, dim, rng, bias=False)
        self.w_v = Linear(f"{name}.w_v", dim, dim, rng, bias=False)
        self.last_weights: np.ndarray | None = None

    def __call__(self, f: Tensor, centers: Tensor) -> Tensor:
        """f (B, d), centers (B, K, d) -> (B, d); per-head softmax over the K centers."""
        if centers.ndim != 3 or centers.shape[1] < 1:
            raise ContractError(f"need at least one center per query, got shape {centers.shape}")
        B, K, d = centers.shape
        H = self.heads
        dh = d // H
        q = self.w_q(f).reshape(B, H, 1, dh)
        k = self.w_k(centers).reshape(B, K, H, dh).transpose(0, 2, 1, 3)
        v = self.w_v(centers).reshape(B, K, H, dh).transpose(0, 2, 1, 3)
        att = nx.softmax(nx.matmul(q, nx.swap_last(k)) * (1.0 / np.sqrt(dh)))  # (B, H, 1, K)
        self.last_weights = att.data
        return nx.matmul(att, v).reshape(B, d)


class FDM(Module):
    def __init__(self, channels: int, cfg: FdmConfig, rng: np.random.Generator, name: str = "fdm"):
        d = N_PARTS * channels
        self.cfg = cfg
        self.channels = channels
        self.attn = CrossAttention(f"{name}.attn", d, cfg.heads, rng)
        self.ffn1 = PostNormFFN(f"{name}.ffn1", d, cfg.hidden_ratio * d, rng)
        self.ffn2 = PostNormFFN(f"{name}.ffn2", d, cfg.hidden_ratio * d, rng)

    def gather(self, bank: MemoryBank, f: np.ndarray, ids, k: int | None = None) -> np.ndarray:
        idx = search_memory(bank, np.atleast_2d(f), np.atleast_1d(ids), k or self.cfg.k)
        return bank.centers[idx]  # (B, K, d)

    def diffuse(self, f: Tensor, scores: Tensor, centers) -> Tensor:
        """Run attention, FFN1, score gate and FFN2 against pre-selected centers."""
        centers = centers if isinstance(centers, Tensor) else Tensor(centers, dtype=f.dtype)
        B, d = f.shape
        fd = self.attn(f, centers)
        t = self.ffn1(fd + f)
        gated = nx.mul(t.reshape(B, N_PARTS, self.channels), scores.reshape(B, N_PARTS, 1))
        return self.ffn2(gated.reshape(B, d) + f)

    def __call__(self, f: Tensor, scores: Tensor, bank: MemoryBank, ids, k: int | None = None) -> Tensor:
        """f (B, N*c) post-OEM features, scores (B, N) -> diffused features (B, N*c)."""
        return self.diffuse(f, scores, self.gather(bank, f.data, ids, k))
