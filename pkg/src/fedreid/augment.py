"""NPO augmentation: patch classification, resize-and-paste, stripe masks.

Also hosts the lighter "common" augmentation applied before occlusion and a
reference random-erasing transform used by the ablation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import OcclusionPatch
from .errors import ConfigurationError, ContractError

VERTICAL = "vertical"
HORIZONTAL = "horizontal"
CORNERS = ("top-left", "top-right", "bottom-left", "bottom-right")
N_STRIPES = 4


@dataclass
class AugmentedPair:
    original: np.ndarray
    occluded: np.ndarray
    mask: np.ndarray  # (4,) float32, 1 = human part, 0 = occlusion
    orientation: str


@dataclass
class OcclusionPlan:
    """Where and what to paste: ``pixels`` lands at rows top:top+h, cols left:left+w."""

    pixels: np.ndarray
    top: int
    left: int
    orientation: str

    @property
    def rows(self) -> slice:
        return slice(self.top, self.top + self.pixels.shape[1])

    @property
    def cols(self) -> slice:
        return slice(self.left, self.left + self.pixels.shape[2])


def classify_patch(p: OcclusionPatch) -> str:
    alpha = p.height / p.width
    return VERTICAL if alpha > 3 else HORIZONTAL


def resize_bilinear(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of a (C, H, W) raster."""
    _, ih, iw = img.shape
    ys = np.clip((np.arange(h) + 0.5) * ih / h - 0.5, 0, ih - 1)
    xs = np.clip((np.arange(w) + 0.5) * iw / w - 0.5, 0, iw - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, ih - 1)
    x1 = np.minimum(x0 + 1, iw - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def jitter_patch(pixels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random crop keeping >= 80% of each side, then per-channel colour jitter."""
    _, ph, pw = pixels.shape
    ch = max(1, int(round(ph * rng.uniform(0.8, 1.0))))
    cw = max(1, int(round(pw * rng.uniform(0.8, 1.0))))
    y = int(rng.integers(0, ph - ch + 1))
    x = int(rng.integers(0, pw - cw + 1))
    crop = pixels[:, y:y + ch, x:x + cw]
    gain = rng.uniform(0.8, 1.2, size=(3, 1, 1))
    shift = rng.uniform(-0.1, 0.1, size=(3, 1, 1))
    return np.clip(crop * gain + shift, 0.0, 1.0).astype(np.float32)


def plan_occlusion(shape, p: OcclusionPatch, rng: np.random.Generator,
                   extent: int | None = None, corner: str | None = None) -> OcclusionPlan:
    """Draw jitter, size and corner for pasting ``p`` onto an image of ``shape``.

    ``extent`` (rows for horizontal patches, columns for vertical ones) and
    ``corner`` override the random draws.
    """
    _, H, W = shape
    if H < 8 or W < 8:
        raise ContractError(f"image {H}x{W} too small to occlude (need >= 8x8)")
    if p.height < 1 or p.width < 1:
        raise ContractError("empty occlusion patch")
    orientation = classify_patch(p)
    pixels = jitter_patch(p.image, rng)
    if orientation == HORIZONTAL:
        lo, hi = H // 4, H // 2
        th = int(rng.integers(lo, hi + 1)) if extent is None else int(extent)
        if not lo <= th <= hi:
            raise ContractError(f"horizontal extent {th} outside [{lo}, {hi}]")
        tw = W
    else:
        lo, hi = W // 4, W // 2
        tw = int(rng.integers(lo, hi + 1)) if extent is None else int(extent)
        if not lo <= tw <= hi:
            raise ContractError(f"vertical extent {tw} outside [{lo}, {hi}]")
        th = H
    if corner is None:
        corner = CORNERS[int(rng.integers(0, 4))]
    elif corner not in CORNERS:
        raise ContractError(f"unknown corner {corner!r}")
    top = 0 if corner.startswith("top") else H - th
    left = 0 if corner.endswith("left") else W - tw
    return OcclusionPlan(resize_bilinear(pixels, th, tw), top, left, orientation)


def apply_plan(x: np.ndarray, plan: OcclusionPlan) -> np.ndarray:
    out = np.array(x, dtype=np.float32, copy=True)
    out[:, plan.rows, plan.cols] = plan.pixels
    return out


def occlude(x: np.ndarray, p: OcclusionPatch, rng: np.random.Generator,
            extent: int | None = None, corner: str | None = None) -> np.ndarray:
    return apply_plan(x, plan_occlusion(x.shape, p, rng, extent, corner))


def generate_mask(x: np.ndarray, x_occ: np.ndarray, orientation: str, eps: float = 0.0) -> np.ndarray:
    """Per-stripe labels: 0 where more than 3/4 of a stripe's pixels changed.

    A pixel counts as changed when |x - x'| > eps in any channel.  Vertical
    occlusions never produce zeros.
    """
    if x.shape != x_occ.shape:
        raise ContractError(f"image shapes differ: {x.shape} vs {x_occ.shape}")
    H = x.shape[1]
    if H % N_STRIPES:
        raise ContractError(f"height {H} not divisible by {N_STRIPES}")
    mask = np.ones(N_STRIPES, dtype=np.float32)
    if orientation == VERTICAL:
        return mask
    if orientation != HORIZONTAL:
        raise ContractError(f"unknown orientation {orientation!r}")
    changed = (np.abs(x - x_occ) > eps).any(axis=0)
    frac = changed.reshape(N_STRIPES, -1).mean(axis=1)
    mask[frac > 0.75] = 0.0
    return mask


def augment_pair(x: np.ndarray, patch_set: Sequence[OcclusionPatch], rng: np.random.Generator) -> AugmentedPair:
    if not patch_set:
        raise ConfigurationError("empty occlusion patch set")
    p = patch_set[int(rng.integers(0, len(patch_set)))]
    plan = plan_occlusion(x.shape, p, rng)
    x_occ = apply_plan(x, plan)
    return AugmentedPair(x, x_occ, generate_mask(x, x_occ, plan.orientation), plan.orientation)


def common_augment(x: np.ndarray, rng: np.random.Generator, max_shift: int = 2) -> np.ndarray:
    """Brightness jitter plus an edge-replicated translation of at most ``max_shift`` px."""
    dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
    _, H, W = x.shape
    rows = np.clip(np.arange(H) - dy, 0, H - 1)
    cols = np.clip(np.arange(W) - dx, 0, W - 1)
    out = x[:, rows][:, :, cols] * rng.uniform(0.9, 1.1)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def random_erase(x: np.ndarray, rng: np.random.Generator, p: float = 0.5,
                 area=(0.02, 0.4), aspect=(0.3, 3.3), attempts: int = 100) -> np.ndarray:
    """Random erasing: one rectangle filled with uniform noise, with probability ``p``."""
    out = np.array(x, dtype=np.float32, copy=True)
    if rng.random() >= p:
        return out
    _, H, W = x.shape
    for _ in range(attempts):
        target = rng.uniform(*area) * H * W
        ratio = np.exp(rng.uniform(np.log(aspect[0]), np.log(aspect[1])))
        h = int(round(np.sqrt(target * ratio)))
        w = int(round(np.sqrt(target / ratio)))
        if 0 < h < H and 0 < w < W:
            y = int(rng.integers(0, H - h + 1))
            z = int(rng.integers(0, W - w + 1))
            out[:, y:y + h, z:z + w] = rng.uniform(0.0, 1.0, size=(3, h, w))
            return out
    return out
