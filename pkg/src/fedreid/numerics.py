"""Dense tensors with tape-based reverse-mode differentiation.

Storage defaults to float32; reductions, matrix products and normalisations
accumulate in float64 and cast back to the operands' result dtype.  Nothing is
recorded unless a :class:`Tape` is active, so inference code needs no special
"no grad" switch.

Usage::

    with Tape() as tape:
        loss = mse(sigmoid(x @ w), target)
        tape.backward(loss)
    w.grad  # populated
"""

from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

DTYPE = np.float32
ACC = np.float64

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "fedreid_tape", default=None
)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._op = False  # True when produced by a recorded operation

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """Named trainable tensor; ``value`` is the tensor itself."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    @property
    def value(self) -> "Parameter":
        return self

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Operation record for one forward/backward pass."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, out: Tensor, parents: tuple[Tensor, ...], fn: Callable) -> None:
        self.nodes.append((out, parents, fn))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for out, parents, fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for p, pg in zip(parents, fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                if not p._op:
                    leaves[key] = p
        if not loss._op and loss.requires_grad:
            leaves[id(loss)] = loss
        for key, leaf in leaves.items():
            g = np.asarray(grads[key], dtype=leaf.data.dtype).reshape(leaf.shape)
            leaf.grad = g if leaf.grad is None else leaf.grad + g
        self.nodes.clear()


def backward(loss: Tensor) -> None:
    tape = _active_tape.get()
    if tape is None:
        raise ContractError("backward called with no active tape")
    tape.backward(loss)


def recording() -> bool:
    return _active_tape.get() is not None


# --------------------------------------------------------------------------
# plumbing


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _result_dtype(*arrays):
    return np.result_type(*arrays)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = True
    tape = _active_tape.get()
    out.requires_grad = tape is not None and any(p.requires_grad for p in parents)
    if out.requires_grad:
        tape.record(out, parents, fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    return a, b


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g / (2.0 * out),))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    out = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(x.dtype, copy=False)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,),
                 lambda g: (g * mask,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    v = x.data.astype(ACC)
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    out = (0.5 * v * (1.0 + t)).astype(x.dtype)

    def fn(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v ** 2)
        d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner
        return ((g * d).astype(x.dtype),)

    return _make(out, (x,), fn)


# --------------------------------------------------------------------------
# shape


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def getitem(x: Tensor, idx) -> Tensor:
    def fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), fn)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = tuple(xs)
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = tuple(xs)
    return _make(np.stack([t.data for t in xs], axis=axis), xs,
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


# --------------------------------------------------------------------------
# reductions and products


def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims, dtype=ACC).astype(x.dtype)
    return _make(out, (x,), lambda g: (_expand(g, x.shape, axis, keepdims).copy(),))


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims, dtype=ACC).astype(x.dtype)
    n = x.data.size // max(1, out.size)
    return _make(out, (x,), lambda g: (_expand(g / n, x.shape, axis, keepdims).copy(),))


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    dtype = _result_dtype(a.data, b.data)
    a64, b64 = a.data.astype(ACC), b.data.astype(ACC)
    out = np.matmul(a64, b64).astype(dtype)

    def fn(g):
        g64 = g.astype(ACC)
        ga = np.matmul(g64, np.swapaxes(b64, -1, -2))
        gb = np.matmul(np.swapaxes(a64, -1, -2), g64)
        return (_unbroadcast(ga, a.shape).astype(dtype), _unbroadcast(gb, b.shape).astype(dtype))

    return _make(out, (a, b), fn)


def dot(a: Tensor, b: Tensor) -> Tensor:
    return tsum(mul(a, b))


# --------------------------------------------------------------------------
# normalisation and probabilities


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    c = x.shape[-1] if x.ndim else 0
    if c == 0:
        raise DimensionError("layer_norm over an empty channel axis")
    if gain.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"layer_norm affine shapes {gain.shape}/{bias.shape} vs channels {c}")
    dtype = _result_dtype(x.data, gain.data, bias.data)
    v = x.data.astype(ACC)
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gn = gain.data.astype(ACC)
    out = (xhat * gn + bias.data.astype(ACC)).astype(dtype)

    def fn(g):
        g64 = g.astype(ACC)
        gx = g64 * gn
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return (dx.astype(dtype),
                (g64 * xhat).sum(axis=lead).astype(dtype),
                g64.sum(axis=lead).astype(dtype))

    return _make(out, (x, gain, bias), fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    v = x.data.astype(ACC)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)
    out = s.astype(x.dtype)

    def fn(g):
        g64 = g.astype(ACC)
        return ((s * (g64 - (g64 * s).sum(axis=axis, keepdims=True))).astype(x.dtype),)

    return _make(out, (x,), fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    v = x.data.astype(ACC)
    z = v - v.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    ls = z - lse
    s = np.exp(ls)

    def fn(g):
        g64 = g.astype(ACC)
        return ((g64 - s * g64.sum(axis=axis, keepdims=True)).astype(x.dtype),)

    return _make(ls.astype(x.dtype), (x,), fn)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"label out of range [0, {k})")
    v = logits.data.astype(ACC)
    z = v - v.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    ls = z - lse
    rows = np.arange(n)
    out = np.asarray(-ls[rows, labels].mean(), dtype=logits.dtype)

    def fn(g):
        d = np.exp(ls)
        d[rows, labels] -= 1.0
        return ((d * (float(g) / n)).astype(logits.dtype),)

    return _make(out, (logits,), fn)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    v = x.data.astype(ACC)
    norm = np.sqrt((v * v).sum(axis=axis, keepdims=True)) + eps
    y = v / norm

    def fn(g):
        g64 = g.astype(ACC)
        return (((g64 - y * (g64 * y).sum(axis=axis, keepdims=True)) / norm).astype(x.dtype),)

    return _make(y.astype(x.dtype), (x,), fn)


def mse(pred: Tensor, target) -> Tensor:
    target = as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shapes {pred.shape} vs {target.shape}")
    return mean(square(sub(pred, target)))


def cast(x: Tensor, dtype) -> Tensor:
    """Change storage precision; the gradient is cast back to the source dtype."""
    src = x.dtype
    return _make(x.data.astype(dtype), (x,), lambda g: (g.astype(src),))
