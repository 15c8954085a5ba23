"""Procedural pedestrian-like images and an occlusion patch set.

Each identity is a four-band figure (head, torso, legs, feet) whose bands line
up with the four horizontal stripes the model pools over.  Band colours and
textures are identity specific; every sample adds brightness jitter, a small
translation and fresh background noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, SplitError
from .seeding import derive_seed, rng_for

N_TEXTURES = 5  # solid, horizontal stripes, vertical stripes, checker, dots
BAND_WIDTHS = (0.34, 0.62, 0.5, 0.56)  # fraction of image width, top to bottom


@dataclass(frozen=True)
class Identity:
    id: int
    appearance_seed: int
    palette: np.ndarray = field(repr=False)  # (3, 3) base colours
    textures: tuple[int, int, int, int]


@dataclass
class Sample:
    image: np.ndarray  # (3, h, w) float32 in [0, 1]
    identity: int
    camera: int
    index: int = -1  # position inside the generated dataset


@dataclass
class OcclusionPatch:
    image: np.ndarray  # (3, p_h, p_w)
    source: str

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]


def make_identity(seed: int, k: int) -> Identity:
    a_seed = derive_seed(seed, "identity", k)
    rng = np.random.default_rng(a_seed)
    palette = rng.uniform(0.05, 0.95, size=(3, 3))
    textures = tuple(int(t) for t in rng.integers(0, N_TEXTURES, size=4))
    return Identity(k, a_seed, palette, textures)


def _texture(code: int, h: int, w: int, base, second, phase: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    if code == 0:
        on = np.zeros((h, w), bool)
    elif code == 1:
        on = ((yy + phase) // 2) % 2 == 0
    elif code == 2:
        on = ((xx + phase) // 2) % 2 == 0
    elif code == 3:
        on = (((yy + phase) // 3) + (xx // 3)) % 2 == 0
    else:
        on = ((yy + phase) % 4 == 0) & (xx % 4 == 0)
    out = np.where(on[None], np.asarray(second)[:, None, None], np.asarray(base)[:, None, None])
    return out


def render(identity: Identity, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    pal = identity.palette
    band_colors = [
        (pal[2], pal[0]),
        (pal[0], pal[1]),
        (pal[1], pal[2]),
        (0.55 * pal.mean(axis=0), pal[0]),
    ]
    bg = rng.uniform(0.25, 0.75, size=3)
    img = bg[:, None, None] + rng.normal(0.0, 0.06, size=(3, h, w))
    dy, dx = rng.integers(-2, 3, size=2)
    band_h = h // 4
    for b in range(4):
        bw = max(2, int(round(BAND_WIDTHS[b] * w)))
        top, bottom = b * band_h + dy, (b + 1) * band_h + dy
        left = (w - bw) // 2 + dx
        if b == 0:
            top += band_h // 4  # head sits lower inside its band
        t0, t1 = max(top, 0), min(bottom, h)
        l0, l1 = max(left, 0), min(left + bw, w)
        if t1 <= t0 or l1 <= l0:
            continue
        base, second = band_colors[b]
        tex = _texture(identity.textures[b], t1 - t0, l1 - l0, base, second, int(rng.integers(0, 2)))
        img[:, t0:t1, l0:l1] = tex + rng.normal(0.0, 0.02, size=tex.shape)
    img *= rng.uniform(0.85, 1.15)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_dataset(ids: int, per_id: int, h: int = 64, w: int = 32, seed: int = 0) -> list[Sample]:
    """Identity-major list of samples; labels run 0..ids-1, ``per_id`` each."""
    if h % 4 or w % 4:
        raise ConfigurationError(f"image extents {h}x{w} must be multiples of 4")
    if ids < 2 or per_id < 2:
        raise ConfigurationError(f"need ids >= 2 and per_id >= 2, got {ids}, {per_id}")
    samples: list[Sample] = []
    seen: set[int] = set()
    for k in range(ids):
        ident = make_identity(seed, k)
        if ident.appearance_seed in seen:
            raise ConfigurationError(f"appearance seed collision at identity {k}")
        seen.add(ident.appearance_seed)
        rng = rng_for(seed, "render", k)
        for j in range(per_id):
            cam = int(rng.integers(0, 4))
            samples.append(Sample(render(ident, h, w, rng), k, cam, len(samples)))
    return samples


def _patch_texture(kind: str, ph: int, pw: int, rng: np.random.Generator) -> np.ndarray:
    c1, c2 = rng.uniform(0.0, 1.0, size=(2, 3))
    if kind == "solid":
        img = np.broadcast_to(c1[:, None, None], (3, ph, pw)).copy()
    elif kind == "gradient":
        t = np.linspace(0.0, 1.0, ph if rng.random() < 0.5 else pw)
        t = t[:, None] if t.size == ph else t[None, :]
        t = np.broadcast_to(t, (ph, pw))
        img = c1[:, None, None] * (1 - t) + c2[:, None, None] * t
    else:
        step = int(rng.integers(2, 5))
        yy, xx = np.mgrid[0:ph, 0:pw]
        on = (yy % step == 0) | (xx % step == 0)
        img = np.where(on[None], c2[:, None, None], c1[:, None, None])
    img = img + rng.normal(0.0, 0.03, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_patch_set(count: int, seed: int = 0) -> list[OcclusionPatch]:
    """Alternates tall (aspect > 3) and wide patches, starting with tall."""
    if count < 1:
        raise ConfigurationError("patch count must be >= 1")
    rng = rng_for(seed, "patches")
    kinds = ("solid", "gradient", "grid")
    patches = []
    for i in range(count):
        kind = kinds[int(rng.integers(0, 3))]
        if i % 2 == 0:
            pw = int(rng.integers(4, 11))
            ph = int(np.ceil(pw * rng.uniform(3.3, 6.0)))
            orient = "vertical"
        else:
            ph = int(rng.integers(6, 17))
            pw = int(np.ceil(ph * rng.uniform(1.0, 4.0)))
            orient = "horizontal"
        patches.append(OcclusionPatch(_patch_texture(kind, ph, pw, rng), f"synthetic:{kind}:{orient}:{i}"))
    return patches


def split_query_gallery(samples: list[Sample], holdout_ids: int, occlude_queries: bool = False,
                        patch_set=None, seed: int = 0) -> tuple[list[Sample], list[Sample]]:
    """Single-query split over the ``holdout_ids`` highest identity labels.

    Within each held-out identity, even-position images become queries and
    odd-position images the gallery.  With ``occlude_queries`` every query is
    replaced by an NPO-augmented copy drawn from ``patch_set``.
    """
    by_id: dict[int, list[Sample]] = {}
    for s in samples:
        by_id.setdefault(s.identity, []).append(s)
    if holdout_ids > len(by_id) or holdout_ids < 1:
        raise SplitError(f"cannot hold out {holdout_ids} of {len(by_id)} identities")
    chosen = sorted(by_id)[-holdout_ids:]
    query, gallery = [], []
    for k in chosen:
        group = by_id[k]
        if len(group) < 2:
            raise SplitError(f"identity {k} has {len(group)} sample(s); need >= 2")
        query.extend(group[0::2])
        gallery.extend(group[1::2])
    if occlude_queries:
        from .augment import augment_pair

        if not patch_set:
            raise ConfigurationError("occlude_queries needs a non-empty patch set")
        rng = rng_for(seed, "query-occlusion")
        query = [Sample(augment_pair(q.image, patch_set, rng).occluded, q.identity, q.camera, q.index)
                 for q in query]
    return query, gallery


def training_subset(samples: list[Sample], holdout_ids: int) -> list[Sample]:
    """Samples whose identity is not among the held-out (highest) labels."""
    labels = sorted({s.identity for s in samples})
    keep = set(labels[:len(labels) - holdout_ids])
    return [s for s in samples if s.identity in keep]


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 dump of a (3, h, w) image in [0, 1]."""
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    _, h, w = img.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.transpose(img, (1, 2, 0)).tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    """Binary P5 dump of a 2-D array in [0, 1] (or a channel mean of a 3-D one)."""
    arr = np.asarray(image)
    if arr.ndim == 3:
        arr = arr.mean(axis=0)
    img = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P6":
        raise ValueError(f"{path} is not a binary PPM")
    w, h = int(fields[1]), int(fields[2])
    pix = np.frombuffer(raw[pos:pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return np.transpose(pix, (2, 0, 1)).astype(np.float32) / 255.0
