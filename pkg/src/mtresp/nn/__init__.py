"""Minimal dense-tensor engine: 1-D conv layers, SmoothL1, Adam."""

from .checkpoint import load_into, read_header, save_checkpoint
from .gradcheck import GradCheckReport, grad_check, grad_check_report, rel_error
from .layers import (BatchNorm1d, Conv1d, ConvTranspose1d, Dense, Flatten, InceptionRes, Layer, LeakyReLU,
                     Param, Sequential, no_grad, param_count)
from .losses import smooth_l1
from .optim import Adam, adam_step

__all__ = [
    "Adam", "BatchNorm1d", "GradCheckReport", "grad_check_report", "Conv1d", "ConvTranspose1d", "Dense", "Flatten", "InceptionRes", "Layer",
    "LeakyReLU", "Param", "Sequential", "adam_step", "grad_check", "load_into", "no_grad", "param_count",
    "read_header", "rel_error", "save_checkpoint", "smooth_l1",
]
