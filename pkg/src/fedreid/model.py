"""The FED network: shared encoder, OEM, FDM and the three identity heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from . import numerics as nx
from .encoder import N_PARTS, Encoder, EncoderConfig, part_pool
from .errors import CheckpointError
from .fdm import FDM, FdmConfig
from .layers import Linear, Module
from .memory import MemoryBank
from .numerics import Tensor
from .oem import OEM

INFERENCE_PREFIXES = ("encoder.", "oem.")


@dataclass
class Features:
    cls: Tensor  # (B, c)
    parts: Tensor  # (B, 4, c) before OEM
    weighted: Tensor  # (B, 4, c) after OEM
    scores: Tensor  # (B, 4)

    @property
    def flat(self) -> Tensor:
        B = self.weighted.shape[0]
        return self.weighted.reshape(B, -1)


class Heads(Module):
    """Identity classifiers on the cls token, the OEM output and the FDM output."""

    def __init__(self, channels: int, num_ids: int, rng, name: str = "heads"):
        d = N_PARTS * channels
        self.cls = Linear(f"{name}.cls", channels, num_ids, rng, bias=False)
        self.oem = Linear(f"{name}.oem", d, num_ids, rng, bias=False)
        self.fdm = Linear(f"{name}.fdm", d, num_ids, rng, bias=False)


class FedModel(Module):
    def __init__(self, enc_cfg: EncoderConfig, fdm_cfg: FdmConfig, num_ids: int,
                 rng: np.random.Generator, use_oem: bool = True):
        self.enc_cfg = enc_cfg
        self.num_ids = num_ids
        self.use_oem = use_oem
        self.encoder = Encoder(enc_cfg, rng)
        self.oem = OEM(enc_cfg.channels, rng)
        self.fdm = FDM(enc_cfg.channels, fdm_cfg, rng)
        self.heads = Heads(enc_cfg.channels, num_ids, rng)

    def features(self, images) -> Features:
        tokens = self.encoder(images)
        B = tokens.shape[0]
        cls = tokens[:, 0, :]
        parts = part_pool(tokens, self.enc_cfg.grid[0])
        if self.use_oem:
            weighted, scores = self.oem(parts)
        else:
            scores = Tensor(np.ones((B, N_PARTS), parts.dtype))
            weighted = parts
        return Features(cls, parts, weighted, scores)

    def embed(self, images) -> np.ndarray:
        """Inference embedding: flattened post-OEM part features.  FDM is not used."""
        return self.features(images).flat.data.copy()

    def state_with_banks(self, banks: dict[str, MemoryBank] | None = None) -> dict[str, np.ndarray]:
        state = self.state_dict()
        for bank in (banks or {}).values():
            state[bank.checkpoint_name()] = bank.centers.copy()
        return state

    def save(self, path, banks: dict[str, MemoryBank] | None = None) -> None:
        checkpoint.save(path, self.state_with_banks(banks))


def load_inference_state(model: FedModel, state: dict[str, np.ndarray]) -> None:
    """Load encoder and OEM tensors; FDM, heads and banks may be absent.

    Every tensor present must match the model's architecture.
    """
    params = model.named_parameters()
    for name, arr in state.items():
        if name.startswith("memory."):
            continue
        if name not in params:
            raise CheckpointError(f"unexpected tensor {name}")
        if arr.shape != params[name].shape:
            raise CheckpointError(f"tensor {name} has shape {arr.shape}, expected {params[name].shape}")
    for name, p in params.items():
        if name.startswith(INFERENCE_PREFIXES):
            if name not in state:
                raise CheckpointError(f"missing tensor {name}")
            p.data = np.asarray(state[name], dtype=nx.DTYPE).copy()
        elif name in state:
            p.data = np.asarray(state[name], dtype=nx.DTYPE).copy()
