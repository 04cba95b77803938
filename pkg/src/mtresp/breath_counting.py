"""Breath detection on a respiration waveform by extrema counting.

Local maxima and minima are forced to alternate, then adjacent extremum
pairs whose vertical distance falls below a fraction of the upper
quartile of all distances are removed smallest-first. Each surviving
maximum is a breath.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal_core import RESP_FS

RR_MIN_BPM = 2.0
RR_MAX_BPM = 90.0
# sub-sample offsets are snapped to this grid (in samples) so that rescaling
# or shifting the waveform cannot perturb peak times through rounding
REFINE_QUANTUM = 2.0 ** -20


class UndefinedRateError(ValueError):
    """Fewer than two breath peaks; no rate can be formed."""


@dataclass
class BreathAnnotation:
    peak_times_s: np.ndarray
    inst_rr_bpm: np.ndarray = field(default_factory=lambda: np.zeros(0))
    avg_rr_bpm: float | None = None
    n_rejected: int = 0

    @property
    def n_peaks(self) -> int:
        return len(self.peak_times_s)

    @classmethod
    def from_peaks(cls, times) -> "BreathAnnotation":
        times = np.asarray(times, dtype=np.float64)
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("peak times must be strictly increasing")
        ann = cls(times)
        ann.inst_rr_bpm, ann.n_rejected = _inst_rr(times)
        ann.avg_rr_bpm = avg_rr(ann) if len(times) >= 2 else None
        return ann

    def to_csv(self, path):
        Path(path).write_text("peak_time_s\n" + "".join(f"{t!r}\n" for t in self.peak_times_s.tolist()))

    def summary(self) -> dict:
        return {
            "n_peaks": self.n_peaks,
            "avg_rr_bpm": self.avg_rr_bpm,
            "inst_rr_bpm": self.inst_rr_bpm.tolist(),
            "n_rejected": self.n_rejected,
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.summary(), indent=2))


def _local_extrema(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices and kinds (+1 max, -1 min) of interior local extrema.

    A plateau counts once, at its first sample.
    """
    d = np.diff(x)
    nz = np.flatnonzero(d)
    if len(nz) < 2:
        return np.zeros(0, int), np.zeros(0, int)
    s = np.sign(d[nz])
    turn = np.flatnonzero(s[1:] != s[:-1])
    # a turn between slope runs nz[t] and nz[t+1] sits at sample nz[t] + 1
    idx = nz[turn] + 1
    kind = np.where(s[turn] > 0, 1, -1)
    return idx, kind


def _alternate(idx: np.ndarray, kind: np.ndarray, x: np.ndarray):
    keep_i, keep_k = [], []
    for i, k in zip(idx.tolist(), kind.tolist()):
        if keep_k and keep_k[-1] == k:
            if (k > 0 and x[i] > x[keep_i[-1]]) or (k < 0 and x[i] < x[keep_i[-1]]):
                keep_i[-1] = i
            continue
        keep_i.append(i)
        keep_k.append(k)
    return np.asarray(keep_i, int), np.asarray(keep_k, int)


def _refine(x: np.ndarray, i: int) -> float:
    """Sub-sample vertex of the parabola through samples i-1, i, i+1."""
    if i <= 0 or i >= len(x) - 1:
        return float(i)
    a, b, c = x[i - 1], x[i], x[i + 1]
    den = a - 2 * b + c
    if den >= 0:
        return float(i)
    off = 0.5 * (a - c) / den
    return i + round(off / REFINE_QUANTUM) * REFINE_QUANTUM


def _inst_rr(times: np.ndarray) -> tuple[np.ndarray, int]:
    if len(times) < 2:
        return np.zeros(0), 0
    rr = 60.0 / np.diff(times)
    ok = (rr > RR_MIN_BPM) & (rr < RR_MAX_BPM)
    return rr[ok], int(np.count_nonzero(~ok))


def count_breaths(resp, fs: float = RESP_FS, t0: float = 0.0, q_frac: float = 0.3) -> BreathAnnotation:
    """Detect breath peaks in a respiration waveform.

    ``q_frac`` scales the third quartile of inter-extremum distances to give
    the validity threshold.
    """
    x = np.asarray(resp, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("respiration waveform contains non-finite samples")
    idx, kind = _alternate(*_local_extrema(x), x)
    if len(idx) < 2:
        return BreathAnnotation(np.zeros(0))

    dist = np.abs(np.diff(x[idx]))
    q = q_frac * np.percentile(dist, 75)

    idx, kind = list(idx), list(kind)
    while len(idx) > 1:
        dist = np.abs(np.diff(x[idx]))
        j = int(np.argmin(dist))
        if dist[j] >= q:
            break
        if j == 0 and len(idx) > 2 and dist[0] < q:
            # dangling edge extremum: dropping only it keeps alternation
            del idx[0], kind[0]
            continue
        if j == len(dist) - 1 and len(idx) > 2:
            del idx[-1], kind[-1]
            continue
        del idx[j:j + 2], kind[j:j + 2]

    idx = np.asarray(idx, int)
    kind = np.asarray(kind, int)
    dist = np.abs(np.diff(x[idx])) if len(idx) > 1 else np.zeros(0)
    peaks = []
    for n in np.flatnonzero(kind > 0):
        flanks = []
        if n > 0:
            flanks.append(dist[n - 1])
        if n < len(idx) - 1:
            flanks.append(dist[n])
        if flanks and min(flanks) >= q and max(flanks) > 0:
            peaks.append(_refine(x, int(idx[n])))
    return BreathAnnotation.from_peaks(t0 + np.asarray(peaks) / fs)


def avg_rr(ann: BreathAnnotation) -> float:
    """60 (n - 1) / (t_last - t_first), in breaths per minute."""
    t = ann.peak_times_s
    if len(t) < 2:
        raise UndefinedRateError(f"average RR needs >= 2 peaks, got {len(t)}")
    return 60.0 * (len(t) - 1) / (t[-1] - t[0])


def inst_rr(ann: BreathAnnotation) -> np.ndarray:
    """Per-interval rates 60 / dt; values outside (2, 90) BrPM are dropped."""
    rr, _ = _inst_rr(np.asarray(ann.peak_times_s, dtype=np.float64))
    return rr
