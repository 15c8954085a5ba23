"""Occlusion Erasing Module: per-part visibility scores that rescale part features."""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .encoder import N_PARTS
from .errors import ConfigurationError, DimensionError
from .layers import LayerNorm, Linear, Module
from .numerics import Tensor


class OemSubmodule(Module):
    """compress c -> c/4, layer norm, regress to one logit, sigmoid."""

    def __init__(self, name: str, channels: int, rng):
        if channels % 4:
            raise ConfigurationError(f"OEM channels {channels} not divisible by 4")
        q = channels // 4
        self.w_cp = Linear(f"{name}.w_cp", channels, q, rng, bias=False)
        self.norm = LayerNorm(f"{name}.norm", q)
        self.w_rg = Linear(f"{name}.w_rg", q, 1, rng, bias=False)

    def __call__(self, f: Tensor) -> Tensor:
        return nx.sigmoid(self.w_rg(self.norm(self.w_cp(f))))


class OEM(Module):
    def __init__(self, channels: int, rng: np.random.Generator, name: str = "oem"):
        self.channels = channels
        self.subs = [OemSubmodule(f"{name}.{i}", channels, rng) for i in range(N_PARTS)]

    def __call__(self, parts: Tensor) -> tuple[Tensor, Tensor]:
        """(B, 4, c) parts -> (weighted parts (B, 4, c), scores (B, 4))."""
        if parts.ndim != 3 or parts.shape[1:] != (N_PARTS, self.channels):
            raise DimensionError(f"OEM expects (B, {N_PARTS}, {self.channels}), got {parts.shape}")
        scores = nx.concat([sub(parts[:, i, :]) for i, sub in enumerate(self.subs)], axis=1)
        return weight_parts(parts, scores), scores


def weight_parts(parts: Tensor, scores: Tensor) -> Tensor:
    B, N, _ = parts.shape
    return nx.mul(parts, scores.reshape(B, N, 1))


def mse_loss(scores: Tensor, mask) -> Tensor:
    """Mean of (s_i - mask_i)^2 over the 4 parts and the batch."""
    mask = np.asarray(mask, dtype=scores.dtype).reshape(scores.shape)
    return nx.mse(scores, mask)
