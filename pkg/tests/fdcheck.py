"""Central finite-difference oracle for tape gradients.

The oracle re-evaluates the loss with parameters promoted to float64, so its
accumulation is independent of the float32 analytic path it checks.  The
float64 path also lets the step be small enough that a probe almost never
straddles a ReLU kink.
"""

from __future__ import annotations

import contextlib

import numpy as np

from fedreid import numerics as nx
from fedreid.numerics import Tape

STEP = 1e-6
RTOL = 1e-3
ATOL = 1e-5


def analytic_grads(loss_fn, params):
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    return [np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64) for p in params]


@contextlib.contextmanager
def relu_patterns(log: list):
    """Record the sign pattern of every ReLU input evaluated inside the block."""
    original = nx.relu

    def spy(x):
        log.append(x.data > 0)
        return original(x)

    nx.relu = spy
    try:
        yield log
    finally:
        nx.relu = original


def _eval(loss_fn, track):
    if not track:
        return float(loss_fn().data), None
    with relu_patterns([]) as log:
        value = float(loss_fn().data)
    return value, log


def _same(a, b) -> bool:
    return a is None or (len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b)))


def numeric_grads(loss_fn, params, entries=None, rng=None, step=STEP, skip_kinks=False):
    """Central differences; ``entries`` caps how many coordinates per tensor are probed.

    With ``skip_kinks`` a coordinate whose two probes see different ReLU
    activation patterns is left as NaN (not probed): the difference quotient
    across a kink does not estimate either one-sided derivative.
    """
    saved = [p.data for p in params]
    out = []
    try:
        for p in params:
            p.data = p.data.astype(np.float64)
        for p in params:
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if entries is not None and flat.size > entries:
                idx = np.sort(rng.choice(flat.size, size=entries, replace=False))
            g = np.full(flat.size, np.nan)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                up, up_pat = _eval(loss_fn, skip_kinks)
                flat[i] = orig - step
                down, down_pat = _eval(loss_fn, skip_kinks)
                flat[i] = orig
                if _same(up_pat, down_pat):
                    g[i] = (up - down) / (2 * step)
            out.append(g.reshape(p.shape))
    finally:
        for p, d in zip(params, saved):
            p.data = d
    return out


def check(loss_fn, params, entries=None, rng=None, rtol=RTOL, atol=ATOL, step=STEP, skip_kinks=False):
    """Return list of (name, worst_violation) where violation > 0 means failure."""
    ana = analytic_grads(loss_fn, params)
    num = numeric_grads(loss_fn, params, entries, rng, step, skip_kinks)
    report = []
    for p, a, n in zip(params, ana, num):
        probed = ~np.isnan(n)
        excess = np.abs(a[probed] - n[probed]) - (atol + rtol * np.abs(n[probed]))
        report.append((getattr(p, "name", "?"), float(excess.max()) if excess.size else -1.0))
    return report


def assert_grads(loss_fn, params, entries=None, rng=None):
    report = check(loss_fn, params, entries, rng)
    bad = [(n, e) for n, e in report if e > 0]
    assert not bad, f"gradient mismatch: {bad}"
