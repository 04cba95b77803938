"""Waveform containers, resampling, zero-phase filtering, windowing and I/O."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy import signal

WINDOW_S = 32.0
STRIDE_S = 2.0
RESP_FS = 4.0
RESP_LEN = 128

_RSP_MAGIC = b"RSP1"


class SignalError(ValueError):
    """Raised for malformed or unusable signals."""


@dataclass(frozen=True)
class SampledSignal:
    """Uniformly sampled multichannel waveform.

    ``samples`` is stored channel-major with shape ``(n_channels, n_samples)``.
    """

    samples: np.ndarray
    fs: float
    channels: tuple[str, ...]
    t0: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise SignalError(f"samples must be 1-D or 2-D, got shape {x.shape}")
        if not self.fs > 0:
            raise SignalError(f"fs must be positive, got {self.fs}")
        chans = tuple(self.channels)
        if len(chans) != x.shape[0]:
            raise SignalError(f"{len(chans)} channel labels for {x.shape[0]} channels")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "fs", float(self.fs))
        object.__setattr__(self, "t0", float(self.t0))

    @classmethod
    def single(cls, x: ArrayLike, fs: float, name: str = "x", t0: float = 0.0) -> "SampledSignal":
        return cls(np.asarray(x, dtype=np.float64)[None, :], fs, (name,), t0)

    def __len__(self) -> int:
        return self.samples.shape[1]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.fs

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) / self.fs

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.samples[self.channels.index(name)]
        except ValueError:
            raise KeyError(f"no channel {name!r}; have {self.channels}") from None

    def select(self, names: Sequence[str]) -> "SampledSignal":
        rows = [self.channels.index(n) for n in names]
        return SampledSignal(self.samples[rows], self.fs, tuple(names), self.t0)

    def slice_time(self, start_s: float, stop_s: float) -> "SampledSignal":
        """Samples whose index falls in ``[start_s, stop_s)`` relative to ``t0``."""
        i0 = max(0, int(round((start_s - self.t0) * self.fs)))
        i1 = min(len(self), int(round((stop_s - self.t0) * self.fs)))
        return SampledSignal(self.samples[:, i0:i1], self.fs, self.channels, self.t0 + i0 / self.fs)


@dataclass
class Window:
    """One fixed-length analysis window.

    ``data`` holds one segment per input channel; ``resp_target`` and
    ``avg_rr`` are the optional supervision targets.
    """

    start_s: float
    length_s: float = WINDOW_S
    data: dict[str, np.ndarray] = field(default_factory=dict)
    resp_target: Optional[np.ndarray] = None
    avg_rr: Optional[float] = None

    def __post_init__(self):
        if self.resp_target is not None and len(self.resp_target) != RESP_LEN:
            raise SignalError(f"respiration target must hold {RESP_LEN} samples")
        if self.avg_rr is not None and not 0 < self.avg_rr < 100:
            raise SignalError(f"average RR {self.avg_rr} outside (0, 100)")

    @property
    def stop_s(self) -> float:
        return self.start_s + self.length_s

    def grid(self, fs: float = RESP_FS) -> np.ndarray:
        """Uniform sample times covering the window at ``fs``."""
        n = int(round(self.length_s * fs))
        return self.start_s + np.arange(n) / fs


def _check_finite(x: np.ndarray):
    if not np.all(np.isfinite(x)):
        raise SignalError("signal contains non-finite samples")


def lowpass(x: np.ndarray, fs: float, cutoff_hz: float, order: int = 8) -> np.ndarray:
    """Zero-phase Butterworth low-pass along the last axis."""
    sos = signal.butter(max(1, order // 2), cutoff_hz, btype="lowpass", fs=fs, output="sos")
    return signal.sosfiltfilt(sos, x, axis=-1)


def resample(sig: SampledSignal, target_len: int, antialias: bool = True) -> SampledSignal:
    """Resample to exactly ``target_len`` samples per channel.

    Low-passes at 0.45 x the new rate when the rate drops, then linearly
    interpolates at the new sample instants.
    """
    n = len(sig)
    if n == 0:
        raise SignalError("cannot resample an empty signal")
    if target_len < 2:
        raise SignalError(f"target_len must be >= 2, got {target_len}")
    new_fs = sig.fs * target_len / n
    x = sig.samples
    if antialias and new_fs < sig.fs and n > 27:
        x = lowpass(x, sig.fs, 0.45 * new_fs)
    t_old = np.arange(n) / sig.fs
    t_new = np.arange(target_len) / new_fs
    out = np.stack([np.interp(t_new, t_old, row) for row in x])
    return SampledSignal(out, new_fs, sig.channels, sig.t0)


def bandpass_array(x: np.ndarray, fs: float, lo_hz: float, hi_hz: float, order: int = 4) -> np.ndarray:
    """Zero-phase band-pass of an array along its last axis.

    ``order`` counts poles per direction, so the Butterworth prototype has
    ``order // 2`` poles before the band-pass transform doubles them.
    """
    if not 0 < lo_hz < hi_hz < fs / 2:
        raise SignalError(f"band [{lo_hz}, {hi_hz}] Hz invalid for fs={fs} Hz")
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    sos = signal.butter(max(1, order // 2), [lo_hz, hi_hz], btype="bandpass", fs=fs, output="sos")
    padlen = min(3 * (2 * len(sos) + 1), x.shape[-1] - 1)
    return signal.sosfiltfilt(sos, x, axis=-1, padlen=padlen)


def bandpass(sig: SampledSignal, lo_hz: float, hi_hz: float, order: int = 4) -> SampledSignal:
    return SampledSignal(bandpass_array(sig.samples, sig.fs, lo_hz, hi_hz, order),
                         sig.fs, sig.channels, sig.t0)


def n_windows(duration_s: float, win_s: float = WINDOW_S, stride_s: float = STRIDE_S) -> int:
    if duration_s < win_s - 1e-9:
        return 0
    return int(np.floor((duration_s - win_s) / stride_s + 1e-9)) + 1


def window_stream(sig: SampledSignal, win_s: float = WINDOW_S, stride_s: float = STRIDE_S) -> list[Window]:
    """Slice ``sig`` into overlapping windows starting at multiples of ``stride_s``."""
    if win_s <= 0 or stride_s <= 0:
        raise SignalError("window and stride must be positive")
    count = n_windows(sig.duration, win_s, stride_s)
    n_win = int(round(win_s * sig.fs))
    out = []
    for k in range(count):
        i0 = int(round(k * stride_s * sig.fs))
        seg = sig.samples[:, i0:i0 + n_win]
        out.append(Window(start_s=sig.t0 + k * stride_s, length_s=win_s,
                          data={ch: seg[i] for i, ch in enumerate(sig.channels)}))
    return out


def znorm(w: ArrayLike, eps: float = 1e-12) -> np.ndarray:
    """Zero mean, unit population variance; flat inputs map to zeros."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise SignalError("znorm of empty sequence")
    mu = w.mean()
    var = w.var()
    if var < eps:
        return np.zeros_like(w)
    return (w - mu) / np.sqrt(var)


# --- serialization -------------------------------------------------------

def write_csv(sig: SampledSignal, path: str | Path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time", *sig.channels])
        for t, row in zip(sig.times, sig.samples.T):
            wr.writerow([repr(float(t)), *(repr(float(v)) for v in row)])


def read_csv(path: str | Path) -> SampledSignal:
    path = Path(path)
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise SignalError(f"{path}: empty file") from None
        if not header or header[0] != "time" or len(header) < 2:
            raise SignalError(f"{path}:1: header must be 'time,<channels...>'")
        rows = []
        for lineno, rec in enumerate(rd, start=2):
            if len(rec) != len(header):
                raise SignalError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                rows.append([float(v) for v in rec])
            except ValueError as exc:
                raise SignalError(f"{path}:{lineno}: {exc}") from None
    if len(rows) < 2:
        raise SignalError(f"{path}: need at least two samples")
    arr = np.asarray(rows)
    t = arr[:, 0]
    dt = np.diff(t)
    if np.any(dt <= 0):
        bad = int(np.argmax(dt <= 0)) + 3
        raise SignalError(f"{path}:{bad}: time not strictly increasing")
    step = (t[-1] - t[0]) / (len(t) - 1)
    if np.max(np.abs(dt - step)) > 1e-6 * max(step, 1e-12) + 1e-9:
        raise SignalError(f"{path}: time column is not uniformly sampled")
    return SampledSignal(arr[:, 1:].T.copy(), 1.0 / step, tuple(header[1:]), float(t[0]))


def write_binary(sig: SampledSignal, path: str | Path):
    """Raw binary form: magic, u32 channel count, f64 fs, u64 length, f64 data.

    Channel labels and ``t0`` are not part of the raw layout; they ride in a
    trailing JSON block that older readers may ignore.
    """
    import json

    meta = json.dumps({"channels": list(sig.channels), "t0": sig.t0}).encode()
    with open(path, "wb") as fh:
        fh.write(_RSP_MAGIC)
        fh.write(struct.pack("<IdQ", sig.n_channels, sig.fs, len(sig)))
        fh.write(np.ascontiguousarray(sig.samples, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)


def read_binary(path: str | Path) -> SampledSignal:
    import json

    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _RSP_MAGIC:
        raise SignalError(f"{path}: bad magic {raw[:4]!r}")
    head = struct.calcsize("<IdQ")
    n_ch, fs, n = struct.unpack_from("<IdQ", raw, 4)
    off = 4 + head
    nbytes = n_ch * n * 8
    if len(raw) < off + nbytes:
        raise SignalError(f"{path}: truncated sample block")
    data = np.frombuffer(raw, dtype="<f8", count=n_ch * n, offset=off).reshape(n_ch, n)
    off += nbytes
    channels = tuple(f"ch{i}" for i in range(n_ch))
    t0 = 0.0
    if len(raw) >= off + 8:
        (mlen,) = struct.unpack_from("<Q", raw, off)
        meta = json.loads(raw[off + 8: off + 8 + mlen])
        channels = tuple(meta.get("channels", channels))
        t0 = float(meta.get("t0", 0.0))
    return SampledSignal(data.astype(np.float64), fs, channels, t0)


def load_signal(path: str | Path) -> SampledSignal:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"signal file not found: {path}")
    if path.suffix.lower() == ".csv":
        return read_csv(path)
    return read_binary(path)


def save_signal(sig: SampledSignal, path: str | Path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        write_csv(sig, path)
    else:
        write_binary(sig, path)
