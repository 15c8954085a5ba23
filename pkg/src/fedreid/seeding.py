"""Stable sub-seed derivation so every module draws from its own stream."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *names) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for name in names:
        h.update(b"\x00")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "little")


def rng_for(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *names))
