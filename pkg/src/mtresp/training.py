"""Splitting, the two-stage learning-rate schedule and the multitask loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import WindowBatch
from .models import Model
from .nn.layers import no_grad
from .nn.losses import smooth_l1
from .nn.optim import adam_step

LR_HIGH = 0.01
LR_LOW = 1e-4
LR_SWITCH_EPOCH = 20
HISTORY_COLUMNS = ("epoch", "lr", "loss_total", "loss_wave", "loss_rr", "val_mae")


class NumericError(RuntimeError):
    """Raised when the loss stops being finite."""


class MissingTargetError(ValueError):
    pass


@dataclass
class TrainConfig:
    conf_id: str = "E"
    epochs: int = 100
    batch_size: int = 128
    split_ratio: float = 0.8
    seed: int = 0
    lr_policy: str | None = None  # None: fixed for CONF-C, adaptive otherwise
    w_wave: float = 1.0
    w_rr: float = 1.0
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie strictly between 0 and 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_policy is None:
            self.lr_policy = "fixed" if str(self.conf_id).upper() == "C" else "adaptive"
        if self.lr_policy not in ("adaptive", "fixed", "zero"):
            raise ValueError(f"unknown lr_policy {self.lr_policy!r}")
        if self.w_wave < 0 or self.w_rr < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class History:
    epoch: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    loss_total: list = field(default_factory=list)
    loss_wave: list = field(default_factory=list)  # None entries when the config has no decoder
    loss_rr: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)

    def __len__(self):
        return len(self.epoch)

    def rows(self):
        return [dict(zip(HISTORY_COLUMNS, r)) for r in
                zip(self.epoch, self.lr, self.loss_total, self.loss_wave, self.loss_rr, self.val_mae)]

    def to_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for r in self.rows():
                w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                            for c in HISTORY_COLUMNS])


def lr_schedule(policy: str, epoch: int) -> float:
    """Learning rate for a 1-based epoch."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    if policy == "adaptive":
        return LR_HIGH if epoch <= LR_SWITCH_EPOCH else LR_LOW
    if policy == "fixed":
        return LR_LOW
    if policy == "zero":
        return 0.0
    raise ValueError(f"unknown lr policy {policy!r}")


def split_dataset(n_or_batch, ratio: float = 0.8, seed: int = 0, groups=None):
    """Deterministic shuffled split into (train_idx, test_idx).

    With ``groups`` (one label per window), whole groups go to one side so
    that e.g. no subject contributes to both sets.
    """
    n = n_or_batch if isinstance(n_or_batch, (int, np.integer)) else len(n_or_batch)
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    if groups is None:
        perm = rng.permutation(n)
        k = int(round(ratio * n))
        return np.sort(perm[:k]), np.sort(perm[k:])
    groups = np.asarray(groups)
    if len(groups) != n:
        raise ValueError("one group label per window required")
    labels = np.unique(groups)
    order = labels[rng.permutation(len(labels))]
    k = int(round(ratio * len(labels)))
    train_labels = set(order[:k].tolist())
    mask = np.array([g in train_labels for g in groups.tolist()])
    return np.flatnonzero(mask), np.flatnonzero(~mask)


def _loss_and_grads(model: Model, wave, rr, batch: WindowBatch, idx, cfg: TrainConfig):
    total, lw, lr_ = 0.0, None, None
    gw = gr = None
    if wave is not None:
        lw, gw = smooth_l1(wave[:, 0, :], batch.wave_targets[idx])
        total += cfg.w_wave * lw
        gw = (cfg.w_wave * gw)[:, None, :]
    if rr is not None:
        lr_, gr = smooth_l1(rr[:, 0], batch.rr_targets[idx])
        total += cfg.w_rr * lr_
        gr = (cfg.w_rr * gr)[:, None]
    return total, lw, lr_, gw, gr


def predict(model: Model, batch: WindowBatch, batch_size: int = 128):
    """Inference-mode outputs: (waveforms (N, 128) or None, avg RR (N,) or None)."""
    x = batch.model_inputs(model.conf.input_kind)
    waves, rrs = [], []
    with no_grad():
        for s in range(0, len(x), batch_size):
            w, r = model.forward(x[s:s + batch_size], training=False)
            if w is not None:
                waves.append(w[:, 0, :])
            if r is not None:
                rrs.append(r[:, 0])
    wave = np.concatenate(waves) if waves else None
    rr = np.concatenate(rrs) if rrs else None
    return wave, rr


def train(model: Model, data: WindowBatch, cfg: TrainConfig, val: WindowBatch | None = None,
          on_epoch: Callable[[int, Model], None] | None = None) -> tuple[Model, History]:
    if len(data) == 0:
        raise MissingTargetError("training set is empty")
    if model.conf.wave_head and (data.wave_targets is None or data.wave_targets.shape[1:] != (128,)):
        raise MissingTargetError("waveform head needs (N, 128) waveform targets")
    if model.conf.rr_head and (data.rr_targets is None or len(data.rr_targets) != len(data)):
        raise MissingTargetError("rate head needs one average-RR target per window")
    x_all = data.model_inputs(model.conf.input_kind)
    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    hist = History()

    for epoch in range(1, cfg.epochs + 1):
        lr = lr_schedule(cfg.lr_policy, epoch)
        order = rng.permutation(len(data))
        sums = np.zeros(3)
        for bi, s in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            model.zero_grad()
            wave, rr = model.forward(x_all[idx], training=True)
            total, lw, lr_, gw, gr = _loss_and_grads(model, wave, rr, data, idx, cfg)
            if not math.isfinite(total):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {bi + 1}")
            model.backward(gw, gr)
            adam_step(params, lr)
            n = len(idx)
            sums += n * np.array([total, lw or 0.0, lr_ or 0.0])
        sums /= len(data)
        hist.epoch.append(epoch)
        hist.lr.append(lr)
        hist.loss_total.append(float(sums[0]))
        hist.loss_wave.append(float(sums[1]) if model.conf.wave_head else None)
        hist.loss_rr.append(float(sums[2]) if model.conf.rr_head else None)
        if val is not None and len(val) and model.conf.rr_head:
            _, pr = predict(model, val)
            hist.val_mae.append(float(np.mean(np.abs(pr - val.rr_targets))))
        else:
            hist.val_mae.append(None)
        if cfg.checkpoint_every and cfg.checkpoint_dir and epoch % cfg.checkpoint_every == 0:
            from .nn.checkpoint import save_checkpoint
            Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_checkpoint(Path(cfg.checkpoint_dir) / f"epoch{epoch:04d}.ckpt", model, {"epoch": epoch})
        if on_epoch is not None:
            on_epoch(epoch, model)
    return model, hist
