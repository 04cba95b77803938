"""Finite-difference verification of hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .layers import Layer, LeakyReLU


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    if a.size == 0:
        return 0.0
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den))


def _snapshot(layer: Layer):
    return [b.copy() for _, b in layer.named_buffers()]


def _restore(layer: Layer, snap):
    for (_, b), s in zip(layer.named_buffers(), snap):
        b[...] = s


def _kink_state(layer: Layer) -> bytes:
    """Which side of every leaky-ReLU kink the last forward pass landed on."""
    parts = []
    stack = [layer]
    while stack:
        node = stack.pop()
        if isinstance(node, LeakyReLU) and node._mask is not None:
            parts.append(np.packbits(node._mask).tobytes())
        stack.extend(c for _, c in reversed(node.children()))
    return b"".join(parts)


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5, idx=None,
                 state: Callable[[], bytes] | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. entries of ``arr`` (perturbed in place).

    With ``state``, entries whose +h and -h evaluations land on different
    sides of a non-differentiable point are returned as NaN.
    """
    flat = arr.reshape(-1)
    idx = range(flat.size) if idx is None else idx
    out = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        sp = state() if state else None
        flat[i] = old - h
        fm = f()
        sm = state() if state else None
        flat[i] = old
        out[i] = (fp - fm) / (2 * h) if sp == sm else np.nan
    return out.reshape(arr.shape)


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    n_kinks: int  # entries skipped because the probe straddled a kink
    per_tensor: dict = field(default_factory=dict)


def grad_check_report(layer: Layer, input_shape, seed: int = 0, h: float = 1e-5, training: bool = True,
                      max_entries: int | None = None, floor: float = 1e-4, x: np.ndarray | None = None,
                      skip_kinks: bool = True) -> GradCheckReport:
    """Compare analytic and central-difference gradients of a fixed random
    projection of the layer output, for the input and every parameter.

    ``max_entries`` subsamples large tensors. With ``skip_kinks`` an entry is
    left out when its two probes fall on different sides of a leaky-ReLU
    kink, where a finite difference does not estimate the derivative.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(input_shape) if x is None else np.array(x, dtype=np.float64)
    snap = _snapshot(layer)
    out = layer.forward(x, training)
    r = rng.standard_normal(out.shape)
    _restore(layer, snap)

    def f() -> float:
        y = layer.forward(x, training)
        _restore(layer, snap)
        return float(np.sum(y * r))

    state = (lambda: _kink_state(layer)) if skip_kinks else None
    layer.zero_grad()
    layer.forward(x, training)
    _restore(layer, snap)
    dx = layer.backward(r)

    def pick(n):
        if max_entries is None or n <= max_entries:
            return np.arange(n)
        return rng.choice(n, size=max_entries, replace=False)

    per, n_checked, n_kinks = {}, 0, 0
    tensors = [("input", x, dx)] + [(n, p.value, p.grad) for n, p in layer.named_params()]
    for name, arr, grad in tensors:
        sel = pick(arr.size)
        num = numeric_grad(f, arr, h, sel, state).reshape(-1)[sel]
        ana = grad.reshape(-1)[sel]
        ok = np.isfinite(num)
        n_kinks += int(np.count_nonzero(~ok))
        n_checked += int(np.count_nonzero(ok))
        per[name] = rel_error(ana[ok], num[ok], floor)
    return GradCheckReport(max(per.values()), n_checked, n_kinks, per)


def grad_check(layer: Layer, input_shape, seed: int = 0, h: float = 1e-5, training: bool = True,
               max_entries: int | None = None, floor: float = 1e-4, x: np.ndarray | None = None,
               skip_kinks: bool = True) -> float:
    """Max relative error between analytic and central-difference gradients."""
    return grad_check_report(layer, input_shape, seed, h, training, max_entries, floor, x,
                             skip_kinks).max_rel_error
