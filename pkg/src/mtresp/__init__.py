"""Respiration-rate estimation from ECG and chest accelerometry with a
multitask 1-D convolutional network built on a small numpy tensor engine."""

from .breath_counting import BreathAnnotation, avg_rr, count_breaths, inst_rr
from .dataset import WindowBatch, read_windows, write_windows
from .models import CONFS, build_conf
from .signal_core import SampledSignal, Window, load_signal, save_signal
from .synth import SynthConfig, generate, make_dataset

__version__ = "0.1.0"

__all__ = [
    "BreathAnnotation", "CONFS", "SampledSignal", "SynthConfig", "Window", "WindowBatch", "avg_rr",
    "build_conf", "count_breaths", "generate", "inst_rr", "load_signal", "make_dataset", "read_windows",
    "save_signal", "write_windows",
]
