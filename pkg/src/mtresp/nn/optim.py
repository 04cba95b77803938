"""Adam with bias correction."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .layers import Param


_CHUNK = 1 << 15


def _adam_chunk(g, m, v, w, tmp, lr, beta1, beta2, eps, bc1, bc2):
    np.multiply(g, 1 - beta1, out=tmp)
    m *= beta1
    m += tmp
    np.multiply(g, g, out=tmp)
    tmp *= 1 - beta2
    v *= beta2
    v += tmp
    if lr == 0:
        return
    np.divide(v, bc2, out=tmp)
    np.sqrt(tmp, out=tmp)
    tmp += eps
    np.divide(m, tmp, out=tmp)
    tmp *= lr / bc1
    w -= tmp


def adam_step(params: Iterable[Param], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    scratch = np.empty(_CHUNK)
    for p in params:
        p.step += 1
        bc1, bc2 = 1 - beta1 ** p.step, 1 - beta2 ** p.step
        # walk flat views in cache-sized chunks; large tensors are memory bound otherwise
        g, m, v, w = (a.reshape(-1) for a in (p.grad, p.m, p.v, p.value))
        for i in range(0, g.size, _CHUNK):
            j = min(i + _CHUNK, g.size)
            _adam_chunk(g[i:j], m[i:j], v[i:j], w[i:j], scratch[:j - i], lr, beta1, beta2, eps, bc1, bc2)


class Adam:
    def __init__(self, params: Iterable[Param], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float):
        adam_step(self.params, lr, self.beta1, self.beta2, self.eps)
