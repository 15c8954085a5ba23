"""Parameter containers and the two dense layers every FED block is built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import numerics as nx
from .errors import CheckpointError
from .numerics import Parameter, Tensor


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(nx.DTYPE)


class Module:
    """Collects :class:`Parameter` attributes, child modules and lists of either."""

    def parameters(self) -> Iterator[Parameter]:
        for value in vars(self).values():
            yield from _walk(value)

    def named_parameters(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for p in self.parameters():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        for name, p in params.items():
            if name not in state:
                if strict:
                    raise CheckpointError(f"missing tensor {name}")
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise CheckpointError(f"tensor {name} has shape {arr.shape}, expected {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
        if strict:
            extra = sorted(set(state) - set(params))
            if extra:
                raise CheckpointError(f"unexpected tensor {extra[0]}")


def _walk(value) -> Iterator[Parameter]:
    if isinstance(value, Parameter):
        yield value
    elif isinstance(value, Module):
        yield from value.parameters()
    elif isinstance(value, (list, tuple)):
        for v in value:
            yield from _walk(v)


class Linear(Module):
    """``y = x @ W (+ b)`` with ``W`` stored as (in, out)."""

    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(f"{name}.weight", uniform_fan_in(rng, d_in, (d_in, d_out)))
        self.bias = Parameter(f"{name}.bias", np.zeros(d_out, nx.DTYPE)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = nx.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, name: str, dim: int, eps: float = 1e-5):
        self.gain = Parameter(f"{name}.gain", np.ones(dim, nx.DTYPE))
        self.bias = Parameter(f"{name}.bias", np.zeros(dim, nx.DTYPE))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.gain, self.bias, self.eps)
