"""SmoothL1 (Huber with unit knee) loss."""

from __future__ import annotations

import numpy as np


def smooth_l1_elementwise(d: np.ndarray) -> np.ndarray:
    a = np.abs(d)
    return np.where(a < 1.0, 0.5 * d * d, a - 0.5)


def smooth_l1(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss summed over each sample's elements and averaged over the batch.

    Returns ``(loss, d loss / d pred)``. At ``|d| == 1`` the linear branch
    supplies the gradient, which coincides with the quadratic one there.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    batch = pred.shape[0] if pred.ndim else 1
    d = pred - target
    loss = float(smooth_l1_elementwise(d).sum() / batch)
    grad = np.clip(d, -1.0, 1.0) / batch
    return loss, grad
