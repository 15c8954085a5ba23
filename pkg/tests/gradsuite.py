"""Layer-by-layer finite-difference cases shared by unit and acceptance tests.

Every case draws its own parameters and inputs uniformly in [-1, 1] (halved
where attention logits would otherwise saturate) and contracts the output
with a fixed random tensor to get a scalar.
"""

from __future__ import annotations

import numpy as np

import fdcheck
from fedreid import numerics as nx
from fedreid.encoder import Block, Encoder, EncoderConfig, SelfAttention, part_pool, patchify
from fedreid.fdm import CrossAttention, FdmConfig, FDM, PostNormFFN
from fedreid.layers import LayerNorm, Linear
from fedreid.memory import MemoryBank, contrastive_loss
from fedreid.numerics import Parameter
from fedreid.oem import OEM, OemSubmodule, mse_loss
from fedreid.training import id_loss

ENTRIES = 12  # probed coordinates per tensor


def _randomise(module, rng):
    params = list(module.parameters())
    for p in params:
        p.data = rng.uniform(-1, 1, p.shape).astype(np.float32)
    return params


def _input(name, shape, rng):
    return Parameter(name, rng.uniform(-1, 1, shape).astype(np.float32))


def case_patch_embed(rng):
    lin = Linear("patch_embed", 3 * 8 * 8, 16, rng)
    imgs = rng.uniform(0, 1, (2, 3, 16, 8)).astype(np.float32)
    x = _input("patches", patchify(imgs, 8).shape, rng)
    x.data = patchify(imgs, 8)
    r = rng.uniform(-1, 1, (2, 2, 16))
    return (lambda: nx.tsum(lin(x) * r)), _randomise(lin, rng) + [x]


def case_attention(rng):
    att = SelfAttention("attn", 16, 2, rng)
    x = _input("x", (2, 5, 16), rng)
    params = _randomise(att, rng)
    for p in params:
        p.data *= 0.5
    r = rng.uniform(-1, 1, (2, 5, 16))
    return (lambda: nx.tsum(att(x) * r)), params + [x]


def case_layer_norm(rng):
    ln = LayerNorm("ln", 16)
    x = _input("x", (3, 16), rng)
    r = rng.uniform(-1, 1, (3, 16))
    return (lambda: nx.tsum(ln(x) * r)), _randomise(ln, rng) + [x]


def case_block(rng):
    cfg = EncoderConfig(channels=16, heads=2, mlp_ratio=2)
    blk = Block("block", cfg, rng)
    x = _input("x", (2, 5, 16), rng)
    params = _randomise(blk, rng)
    for p in params:
        p.data *= 0.5
    r = rng.uniform(-1, 1, (2, 5, 16))
    return (lambda: nx.tsum(blk(x) * r)), params + [x]


def case_encoder(rng):
    cfg = EncoderConfig(height=32, width=16, patch=8, depth=1, channels=16, heads=2)
    enc = Encoder(cfg, rng)
    imgs = rng.uniform(0, 1, (2, 3, 32, 16)).astype(np.float32)
    params = _randomise(enc, rng)
    for p in params:
        p.data *= 0.5
    r = rng.uniform(-1, 1, (2, 4, 16))
    return (lambda: nx.tsum(part_pool(enc(imgs), cfg.grid[0]) * r)), params


def case_oem_submodule(rng):
    sub = OemSubmodule("oem.0", 16, rng)
    f = _input("f", (3, 16), rng)
    r = rng.uniform(-1, 1, (3, 1))
    return (lambda: nx.tsum(sub(f) * r)), _randomise(sub, rng) + [f]


def case_oem_weighting(rng):
    oem = OEM(16, rng)
    parts = _input("parts", (2, 4, 16), rng)
    r = rng.uniform(-1, 1, (2, 4, 16))
    return (lambda: nx.tsum(oem(parts)[0] * r)), _randomise(oem, rng) + [parts]


def case_cross_attention(rng):
    att = CrossAttention("fdm.attn", 32, 4, rng)
    f = _input("f", (2, 32), rng)
    centers = _input("centers", (2, 3, 32), rng)
    r = rng.uniform(-1, 1, (2, 32))
    return (lambda: nx.tsum(att(f, centers) * r)), _randomise(att, rng) + [f, centers]


def case_ffn(rng):
    ffn = PostNormFFN("fdm.ffn1", 16, 32, rng)
    x = _input("x", (3, 16), rng)
    r = rng.uniform(-1, 1, (3, 16))
    return (lambda: nx.tsum(ffn(x) * r)), _randomise(ffn, rng) + [x]


def case_fdm(rng):
    fdm = FDM(8, FdmConfig(heads=4, k=3), rng)
    f = _input("f", (2, 32), rng)
    scores = _input("scores", (2, 4), rng)
    centers = _input("centers", (2, 3, 32), rng)
    params = _randomise(fdm, rng)
    for p in params:
        p.data *= 0.5
    r = rng.uniform(-1, 1, (2, 32))
    return (lambda: nx.tsum(fdm.diffuse(f, scores, centers) * r)), params + [f, scores, centers]


def case_id_loss(rng):
    head = Linear("head", 16, 6, rng, bias=False)
    f = _input("f", (4, 16), rng)
    labels = rng.integers(0, 6, 4)
    return (lambda: id_loss(f, head, labels)), _randomise(head, rng) + [f]


def case_contrastive(rng, normalize=True):
    f = _input("f", (4, 16), rng)
    bank = MemoryBank(rng.uniform(-1, 1, (5, 16)).astype(np.float32))
    labels = rng.integers(0, 5, 4)
    return (lambda: contrastive_loss(f, bank, labels, 0.05, normalize)), [f]


def case_contrastive_raw(rng):
    return case_contrastive(rng, normalize=False)


def case_mse(rng):
    s = Parameter("scores", rng.uniform(0, 1, (4, 4)).astype(np.float32))
    mask = rng.integers(0, 2, (4, 4))
    return (lambda: mse_loss(s, mask)), [s]


CASES = {
    "patch_embed": case_patch_embed,
    "attention": case_attention,
    "layer_norm": case_layer_norm,
    "encoder_block": case_block,
    "encoder": case_encoder,
    "oem_submodule": case_oem_submodule,
    "oem_weighting": case_oem_weighting,
    "fdm_cross_attention": case_cross_attention,
    "fdm_ffn": case_ffn,
    "fdm_full": case_fdm,
    "id_loss": case_id_loss,
    "contrastive_loss": case_contrastive,
    "contrastive_loss_unnormalised": case_contrastive_raw,
    "mse_loss": case_mse,
}


def run_case(name: str, seed: int, step: float = fdcheck.STEP, skip_kinks: bool = False):
    """[(tensor name, worst excess over tolerance)]; excess > 0 is a failure."""
    rng = np.random.default_rng(seed)
    loss_fn, params = CASES[name](rng)
    return fdcheck.check(loss_fn, params, entries=ENTRIES, rng=rng, step=step, skip_kinks=skip_kinks)
