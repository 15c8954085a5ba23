"""Small ViT-style encoder shared by the holistic and occluded branches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError
from .layers import LayerNorm, Linear, Module
from .numerics import Parameter, Tensor

N_PARTS = 4


@dataclass
class EncoderConfig:
    height: int = 64
    width: int = 32
    patch: int = 8
    depth: int = 4
    channels: int = 64
    heads: int = 4
    mlp_ratio: int = 2

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    @property
    def tokens(self) -> int:
        gh, gw = self.grid
        return gh * gw

    def validate(self) -> None:
        if self.channels % self.heads:
            raise ConfigurationError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.height % self.patch or self.width % self.patch:
            raise ConfigurationError(
                f"image {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.grid[0] % N_PARTS:
            raise ConfigurationError(f"{self.grid[0]} token rows cannot form {N_PARTS} parts")


FULL_SCALE = EncoderConfig(height=256, width=128, patch=16, depth=12, channels=768, heads=12, mlp_ratio=4)


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, 3, H, W) -> (B, n, 3*p*p), tokens in row-major grid order."""
    B, C, H, W = images.shape
    x = images.reshape(B, C, H // patch, patch, W // patch, patch)
    return x.transpose(0, 2, 4, 1, 3, 5).reshape(B, (H // patch) * (W // patch), C * patch * patch)


class SelfAttention(Module):
    def __init__(self, name: str, dim: int, heads: int, rng):
        self.heads = heads
        self.qkv = Linear(f"{name}.qkv", dim, 3 * dim, rng)
        self.proj = Linear(f"{name}.proj", dim, dim, rng)
        self.last_weights: np.ndarray | None = None

    def __call__(self, x: Tensor) -> Tensor:
        B, T, C = x.shape
        dh = C // self.heads
        qkv = self.qkv(x).reshape(B, T, 3, self.heads, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = nx.softmax(nx.matmul(q, nx.swap_last(k)) * (1.0 / np.sqrt(dh)))
        self.last_weights = att.data
        out = nx.matmul(att, v).transpose(0, 2, 1, 3).reshape(B, T, C)
        return self.proj(out)


class Block(Module):
    """Pre-norm transformer block."""

    def __init__(self, name: str, cfg: EncoderConfig, rng):
        c = cfg.channels
        self.norm1 = LayerNorm(f"{name}.norm1", c)
        self.attn = SelfAttention(f"{name}.attn", c, cfg.heads, rng)
        self.norm2 = LayerNorm(f"{name}.norm2", c)
        self.fc1 = Linear(f"{name}.fc1", c, cfg.mlp_ratio * c, rng)
        self.fc2 = Linear(f"{name}.fc2", cfg.mlp_ratio * c, c, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(nx.gelu(self.fc1(self.norm2(x))))


# Fixed input normalisation; raw pixels in [0, 1] share a large common
# component that makes every embedding nearly parallel at init.
PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, name: str = "encoder"):
        cfg.validate()
        self.cfg = cfg
        c, p = cfg.channels, cfg.patch
        self.patch_embed = Linear(f"{name}.patch_embed", 3 * p * p, c, rng)
        self.cls_token = Parameter(f"{name}.cls_token", rng.uniform(-0.02, 0.02, (1, 1, c)))
        self.pos_embed = Parameter(f"{name}.pos_embed", rng.uniform(-0.02, 0.02, (1, cfg.tokens + 1, c)))
        self.blocks = [Block(f"{name}.blocks.{i}", cfg, rng) for i in range(cfg.depth)]
        self.norm = LayerNorm(f"{name}.norm", c)

    def __call__(self, images) -> Tensor:
        """(B, 3, H, W) images -> (B, n+1, c) tokens; row 0 is the cls token."""
        imgs = np.asarray(images.data if isinstance(images, Tensor) else images)
        if imgs.ndim == 3:
            imgs = imgs[None]
        want = (3, self.cfg.height, self.cfg.width)
        if imgs.shape[1:] != want:
            raise ConfigurationError(f"encoder expects images {want}, got {imgs.shape[1:]}")
        B = imgs.shape[0]
        imgs = ((imgs - PIXEL_MEAN) / PIXEL_STD).astype(nx.DTYPE)
        x = self.patch_embed(Tensor(patchify(imgs, self.cfg.patch)))
        cls = nx.add(Tensor(np.zeros((B, 1, self.cfg.channels), nx.DTYPE)), self.cls_token)
        x = nx.concat([cls, x], axis=1) + self.pos_embed
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


def part_pool(tokens: Tensor, grid_rows: int, parts: int = N_PARTS) -> Tensor:
    """Mean over ``parts`` contiguous bands of token rows: (B, n+1, c) -> (B, parts, c)."""
    B, T, c = tokens.shape
    n = T - 1
    if grid_rows <= 0 or grid_rows % parts or n % grid_rows:
        raise ConfigurationError(f"{grid_rows} token rows cannot form {parts} equal parts of {n} tokens")
    grid = tokens[:, 1:, :]
    return grid.reshape(B, parts, n // parts, c).mean(axis=2)
