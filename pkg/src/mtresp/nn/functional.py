"""Stateless 1-D convolution kernels (im2col + one GEMM) and their adjoints.

Activations are ``(batch, channels, length)``. Conv weights are
``(out, in, k)``; transposed-conv weights are ``(in, out, k)`` so that a
single array serves both a convolution and its exact adjoint.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_len(L: int, k: int, stride: int, padding: int) -> int:
    return (L + 2 * padding - k) // stride + 1


def tconv_out_len(L: int, k: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (L - 1) * stride - 2 * padding + k + output_padding


def _live_taps(L: int, Lo: int, k: int, stride: int, padding: int) -> tuple[int, int]:
    """Kernel taps that ever overlap real (unpadded) input samples."""
    j0 = max(0, padding - stride * (Lo - 1))
    j1 = min(k - 1, padding + L - 1)
    return j0, j1


def _cols(x: np.ndarray, k: int, stride: int, padding: int, Lo: int, j0: int, j1: int) -> np.ndarray:
    B, C, L = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    need = stride * (Lo - 1) + k
    if xp.shape[2] < need:
        xp = np.pad(xp, ((0, 0), (0, 0), (0, need - xp.shape[2])))
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :Lo, j0:j1 + 1]
    return win.transpose(0, 2, 1, 3).reshape(B * Lo, C * (j1 - j0 + 1))


def conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1, padding: int = 0) -> np.ndarray:
    B, C, L = x.shape
    O, Cw, k = w.shape
    if Cw != C:
        raise ValueError(f"conv1d: input has {C} channels, weight expects {Cw}")
    if k > L + 2 * padding:
        raise ValueError(f"conv1d: kernel {k} longer than padded input {L + 2 * padding}")
    Lo = conv_out_len(L, k, stride, padding)
    j0, j1 = _live_taps(L, Lo, k, stride, padding)
    cols = _cols(x, k, stride, padding, Lo, j0, j1)
    wm = w[:, :, j0:j1 + 1].reshape(O, -1)
    out = (cols @ wm.T).reshape(B, Lo, O).transpose(0, 2, 1)
    if b is not None:
        out = out + b[None, :, None]
    return np.ascontiguousarray(out)


def conv1d_weight_grad(x: np.ndarray, g: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """d<conv1d(x, w), g>/dw for output-gradient ``g`` of shape (B, O, Lo)."""
    B, C, L = x.shape
    _, O, Lo = g.shape
    j0, j1 = _live_taps(L, Lo, k, stride, padding)
    cols = _cols(x, k, stride, padding, Lo, j0, j1)
    gm = g.transpose(0, 2, 1).reshape(B * Lo, O)
    dw = np.zeros((O, C, k))
    dw[:, :, j0:j1 + 1] = (gm.T @ cols).reshape(O, C, j1 - j0 + 1)
    return dw


def conv1d_input_grad(g: np.ndarray, w: np.ndarray, L: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of conv1d in its input: maps (B, O, Lo) back to (B, C, L)."""
    B, O, Lo = g.shape
    _, C, k = w.shape
    j0, j1 = _live_taps(L, Lo, k, stride, padding)
    kk = j1 - j0 + 1
    gm = g.transpose(0, 2, 1).reshape(B * Lo, O)
    dcols = (gm @ w[:, :, j0:j1 + 1].reshape(O, C * kk)).reshape(B, Lo, C, kk)
    full = max(L + 2 * padding, stride * (Lo - 1) + k)
    dxp = np.zeros((B, C, full))
    span = stride * (Lo - 1) + 1
    for t in range(kk):
        j = j0 + t
        dxp[:, :, j:j + span:stride] += dcols[:, :, :, t].transpose(0, 2, 1)
    return dxp[:, :, padding:padding + L]


def conv_transpose1d(y: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> np.ndarray:
    B, Ci, L = y.shape
    Cw, Co, k = w.shape
    if Cw != Ci:
        raise ValueError(f"conv_transpose1d: input has {Ci} channels, weight expects {Cw}")
    if output_padding < 0 or (output_padding and output_padding >= stride):
        raise ValueError("output_padding must be smaller than stride")
    Lo = tconv_out_len(L, k, stride, padding, output_padding)
    if Lo < 1:
        raise ValueError("conv_transpose1d: non-positive output length")
    out = conv1d_input_grad(y, w, Lo, stride, padding)
    if b is not None:
        out = out + b[None, :, None]
    return np.ascontiguousarray(out)


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)
