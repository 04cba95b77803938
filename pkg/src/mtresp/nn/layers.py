"""Layers with hand-written reverse-mode gradients.

Every layer caches what its ``backward`` needs during ``forward`` (unless
inside :func:`no_grad`), and ``backward(g)`` accumulates parameter
gradients into ``Param.grad`` and returns the gradient w.r.t. the input.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import functional as F

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Skip backward caches; for inference and timing."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@dataclass(eq=False)
class Param:
    value: np.ndarray
    name: str = ""
    grad: np.ndarray = field(init=False)
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    step: int = 0

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad.fill(0.0)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, slope: float | None = LEAKY_SLOPE) -> np.ndarray:
    gain = np.sqrt(2.0 / (1.0 + slope ** 2)) if slope is not None else 1.0
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    kind = "layer"

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, training=False):
        return self.forward(x, training)

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def own_params(self) -> list[tuple[str, Param]]:
        return []

    def own_buffers(self) -> list[tuple[str, np.ndarray]]:
        return []

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for n, p in self.own_params():
            yield prefix + n, p
        for cn, c in self.children():
            yield from c.named_params(f"{prefix}{cn}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for n, b in self.own_buffers():
            yield prefix + n, b
        for cn, c in self.children():
            yield from c.named_buffers(f"{prefix}{cn}.")

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def spec(self) -> dict:
        return {"kind": self.kind}


class Conv1d(Layer):
    kind = "conv1d"

    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None, slope: float | None = LEAKY_SLOPE):
        if min(cin, cout, k, stride) < 1 or padding < 0:
            raise ValueError("conv1d hyperparameters must be positive")
        rng = rng or np.random.default_rng(0)
        self.cin, self.cout, self.k, self.stride, self.padding = cin, cout, k, stride, padding
        self.w = Param(kaiming_uniform(rng, (cout, cin, k), cin * k, slope))
        self.b = Param(np.zeros(cout))
        self._x = None

    def own_params(self):
        return [("w", self.w), ("b", self.b)]

    def forward(self, x, training=False):
        if _grad_enabled:
            self._x = x
        return F.conv1d(x, self.w.value, self.b.value, self.stride, self.padding)

    def backward(self, g):
        x = self._x
        self.w.grad += F.conv1d_weight_grad(x, g, self.k, self.stride, self.padding)
        self.b.grad += g.sum(axis=(0, 2))
        return F.conv1d_input_grad(g, self.w.value, x.shape[2], self.stride, self.padding)

    def spec(self):
        return {"kind": self.kind, "in": self.cin, "out": self.cout, "kernel": self.k,
                "stride": self.stride, "padding": self.padding}


class ConvTranspose1d(Layer):
    kind = "conv_transpose1d"

    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, padding: int = 0,
                 output_padding: int = 0, rng: np.random.Generator | None = None,
                 slope: float | None = LEAKY_SLOPE):
        if min(cin, cout, k, stride) < 1 or padding < 0:
            raise ValueError("conv_transpose1d hyperparameters must be positive")
        rng = rng or np.random.default_rng(0)
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.padding, self.output_padding = stride, padding, output_padding
        # each output sample receives about cin * k / stride contributions
        self.w = Param(kaiming_uniform(rng, (cin, cout, k), max(1, cin * k // stride), slope))
        self.b = Param(np.zeros(cout))
        self._y = None

    def own_params(self):
        return [("w", self.w), ("b", self.b)]

    def forward(self, y, training=False):
        if _grad_enabled:
            self._y = y
        return F.conv_transpose1d(y, self.w.value, self.b.value, self.stride, self.padding, self.output_padding)

    def backward(self, g):
        y = self._y
        self.w.grad += F.conv1d_weight_grad(g, y, self.k, self.stride, self.padding)
        self.b.grad += g.sum(axis=(0, 2))
        return F.conv1d(g, self.w.value, None, self.stride, self.padding)[:, :, :y.shape[2]]

    def spec(self):
        return {"kind": self.kind, "in": self.cin, "out": self.cout, "kernel": self.k, "stride": self.stride,
                "padding": self.padding, "output_padding": self.output_padding}


class BatchNorm1d(Layer):
    """Per-channel normalization over (batch, length)."""

    kind = "batch_norm1d"

    def __init__(self, c: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        self.c, self.eps, self.momentum = c, eps, momentum
        self.gamma = Param(np.ones(c))
        self.beta = Param(np.zeros(c))
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self._cache = None

    def own_params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def own_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x, training=False):
        if x.shape[0] == 0:
            raise ValueError("batch_norm1d on an empty batch")
        if training:
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            n = x.shape[0] * x.shape[2]
            m = self.momentum
            self.running_mean *= 1 - m
            self.running_mean += m * mean
            self.running_var *= 1 - m
            self.running_var += m * var * (n / max(n - 1, 1))
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None]) * inv[None, :, None]
        if _grad_enabled:
            self._cache = (xhat, inv, training)
        return self.gamma.value[None, :, None] * xhat + self.beta.value[None, :, None]

    def backward(self, g):
        xhat, inv, training = self._cache
        self.gamma.grad += (g * xhat).sum(axis=(0, 2))
        self.beta.grad += g.sum(axis=(0, 2))
        gx = g * self.gamma.value[None, :, None]
        if not training:
            return gx * inv[None, :, None]
        mg = gx.mean(axis=(0, 2), keepdims=True)
        mgx = (gx * xhat).mean(axis=(0, 2), keepdims=True)
        return (gx - mg - xhat * mgx) * inv[None, :, None]

    def spec(self):
        return {"kind": self.kind, "channels": self.c, "eps": self.eps, "momentum": self.momentum}


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, slope: float = LEAKY_SLOPE):
        self.slope = slope
        self._mask = None

    def forward(self, x, training=False):
        mask = x >= 0
        if _grad_enabled:
            self._mask = mask
        return np.where(mask, x, self.slope * x)

    def backward(self, g):
        return np.where(self._mask, g, self.slope * g)

    def spec(self):
        return {"kind": self.kind, "slope": self.slope}


class InceptionRes(Layer):
    """Two parallel channel-halving convs (k=1 and k=kernel), concatenated,
    batch-normalized, added to the identity, then leaky ReLU."""

    kind = "inception_res"

    def __init__(self, c: int, kernel: int = 15, rng: np.random.Generator | None = None):
        if c % 2:
            raise ValueError(f"inception_res needs an even channel count, got {c}")
        rng = rng or np.random.default_rng(0)
        self.c, self.kernel = c, kernel
        self.branch1 = Conv1d(c, c // 2, 1, rng=rng)
        self.branchk = Conv1d(c, c // 2, kernel, padding=kernel // 2, rng=rng)
        self.bn = BatchNorm1d(c)
        self.act = LeakyReLU()

    def children(self):
        return [("branch1", self.branch1), ("branchk", self.branchk), ("bn", self.bn), ("act", self.act)]

    def forward(self, x, training=False):
        h = np.concatenate([self.branch1(x, training), self.branchk(x, training)], axis=1)
        return self.act(self.bn(h, training) + x, training)

    def backward(self, g):
        gs = self.act.backward(g)
        gh = self.bn.backward(gs)
        half = self.c // 2
        return gs + self.branch1.backward(gh[:, :half]) + self.branchk.backward(gh[:, half:])

    def spec(self):
        return {"kind": self.kind, "channels": self.c, "kernel": self.kernel}


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 slope: float | None = None):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.w = Param(kaiming_uniform(rng, (n_out, n_in), n_in, slope))
        self.b = Param(np.zeros(n_out))
        self._x = None

    def own_params(self):
        return [("w", self.w), ("b", self.b)]

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"dense expects (B, {self.n_in}), got {x.shape}")
        if _grad_enabled:
            self._x = x
        return x @ self.w.value.T + self.b.value

    def backward(self, g):
        self.w.grad += g.T @ self._x
        self.b.grad += g.sum(axis=0)
        return g @ self.w.value

    def spec(self):
        return {"kind": self.kind, "in": self.n_in, "out": self.n_out}


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        self._shape = None

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers: list[Layer] | None = None):
        self.layers = list(layers or [])

    def children(self):
        return [(str(i), l) for i, l in enumerate(self.layers)]

    def append(self, layer: Layer):
        self.layers.append(layer)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def spec(self):
        return {"kind": self.kind, "layers": [l.spec() for l in self.layers]}


def param_count(layer: Layer) -> int:
    return sum(p.size for p in layer.params())
