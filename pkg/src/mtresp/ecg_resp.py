"""R-peak detection and ECG-derived respiration (EDR) surrogates."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, signal
from scipy.interpolate import CubicSpline

from .signal_core import RESP_FS, RESP_LEN, SampledSignal, SignalError, Window, bandpass_array, znorm

EDR_BAND = (0.1, 0.7)
GAP_RANGE_S = (0.25, 3.0)
REFRACTORY_S = 0.25


class NoQRSError(SignalError):
    """The ECG carries no detectable QRS energy."""


class InsufficientBeatsError(SignalError):
    """Too few beats inside a window to build a respiration surrogate."""


@dataclass(frozen=True)
class RPeakSeries:
    times_s: np.ndarray
    amplitudes: np.ndarray
    source_fs: float

    def __post_init__(self):
        t = np.asarray(self.times_s, dtype=np.float64)
        a = np.asarray(self.amplitudes, dtype=np.float64)
        if t.shape != a.shape:
            raise ValueError("times and amplitudes differ in length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("R-peak times must be strictly increasing")
        object.__setattr__(self, "times_s", t)
        object.__setattr__(self, "amplitudes", a)

    def __len__(self):
        return len(self.times_s)

    @property
    def rr_intervals(self) -> np.ndarray:
        return np.diff(self.times_s)

    def to_csv(self, path):
        lines = ["time_s,amplitude"] + [f"{t!r},{a!r}" for t, a in zip(self.times_s.tolist(), self.amplitudes.tolist())]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, source_fs: float) -> "RPeakSeries":
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(arr[:, 0], arr[:, 1], source_fs)


@dataclass
class Surrogate:
    """A 128-sample respiration surrogate; ``degenerate`` marks a zero-filled guard output."""

    wave: np.ndarray
    degenerate: bool = False


def _baseline(x: np.ndarray, fs: float) -> np.ndarray:
    # two-stage median removes QRS then P/T-scale bumps
    k1 = int(0.2 * fs) | 1
    k2 = int(0.6 * fs) | 1
    return ndimage.median_filter(ndimage.median_filter(x, k1, mode="nearest"), k2, mode="nearest")


def _qrs_energy(x: np.ndarray, fs: float) -> np.ndarray:
    f = bandpass_array(x, fs, 5.0, 15.0, order=4)
    d = np.gradient(f) * fs
    return ndimage.uniform_filter1d(d * d, max(1, int(round(0.150 * fs))), mode="nearest")


def detect_r_peaks(ecg: SampledSignal, search_s: float = 0.050, refractory_s: float = REFRACTORY_S) -> RPeakSeries:
    """Band-pass / derivative / square / integrate, adaptive thresholds, raw refinement."""
    if ecg.n_channels != 1:
        raise SignalError("detect_r_peaks expects a single-channel ECG")
    fs = ecg.fs
    if fs < 100:
        raise SignalError(f"ECG sampling rate {fs} Hz below 100 Hz")
    if ecg.duration < 5:
        raise SignalError("ECG shorter than 5 s")
    x = ecg.samples[0]
    if not np.all(np.isfinite(x)):
        raise NoQRSError("ECG contains non-finite samples")
    if np.ptp(x) < 1e-12:
        raise NoQRSError("flat ECG: no QRS energy")

    mwi = _qrs_energy(x, fs)
    refr = int(round(refractory_s * fs))
    cand, _ = signal.find_peaks(mwi, distance=max(1, refr))
    if len(cand) == 0:
        raise NoQRSError("no QRS candidates found")

    # learning phase over the first 2 s
    head = mwi[: int(2 * fs)]
    spk = 0.25 * head.max()
    npk = 0.5 * head.mean()
    qrs: list[int] = []
    rr_hist: list[int] = []
    last_checked = 0
    for ci, c in enumerate(cand):
        thr = npk + 0.25 * (spk - npk)
        v = mwi[c]
        if v > thr:
            qrs.append(int(c))
            spk = 0.125 * v + 0.875 * spk
        else:
            npk = 0.125 * v + 0.875 * npk
        if len(qrs) >= 2 and qrs[-1] == c:
            rr_hist = (rr_hist + [qrs[-1] - qrs[-2]])[-8:]
        # search back when a beat is overdue
        if rr_hist and qrs and c - qrs[-1] > 1.66 * np.mean(rr_hist):
            lo = qrs[-1] + refr
            pool = [k for k in cand[last_checked:ci + 1] if lo <= k < c and mwi[k] > 0.5 * thr]
            if pool:
                best = max(pool, key=lambda k: mwi[k])
                qrs.append(int(best))
                qrs.sort()
                spk = 0.25 * mwi[best] + 0.75 * spk
        last_checked = ci

    if not qrs:
        raise NoQRSError("no QRS complexes exceeded the adaptive threshold")

    half = int(round(search_s * fs))
    peaks = []
    for q in sorted(set(qrs)):
        lo, hi = max(0, q - half), min(len(x), q + half + 1)
        peaks.append(lo + int(np.argmax(x[lo:hi])))
    peaks = np.unique(peaks)

    # refractory: keep the taller of two peaks closer than the limit
    kept = [int(peaks[0])]
    for p in peaks[1:]:
        if p - kept[-1] < refr:
            if x[p] > x[kept[-1]]:
                kept[-1] = int(p)
        else:
            kept.append(int(p))
    kept = np.asarray(kept)

    amp = x[kept] - _baseline(x, fs)[kept]
    return RPeakSeries(ecg.t0 + kept / fs, amp, fs)


def _surrogate(times: np.ndarray, values: np.ndarray, win: Window, margin_s: float,
               band: tuple[float, float], rel_floor: float) -> Surrogate:
    t_all = np.arange(int(round((win.length_s + 2 * margin_s) * RESP_FS))) / RESP_FS + win.start_s - margin_s
    lo = max(t_all[0], times[0])
    hi = min(t_all[-1], times[-1])
    # restrict the filtered span to where beats exist, always covering the window
    keep = (t_all >= min(lo, win.start_s)) & (t_all <= max(hi, win.stop_s - 1 / RESP_FS))
    t_grid = t_all[keep]
    spline = CubicSpline(times, values, bc_type="natural")
    series = spline(np.clip(t_grid, times[0], times[-1]))
    filtered = bandpass_array(series, RESP_FS, *band, order=4)
    i0 = int(round((win.start_s - t_grid[0]) * RESP_FS))
    out = filtered[i0:i0 + RESP_LEN]
    scale = np.mean(np.abs(values))
    if np.std(out) <= rel_floor * scale:
        return Surrogate(np.zeros(RESP_LEN), True)
    z = znorm(out)
    return Surrogate(z, not z.any())


def _beats_for_window(peaks: RPeakSeries, win: Window, margin_s: float):
    inside = (peaks.times_s >= win.start_s) & (peaks.times_s < win.stop_s)
    if np.count_nonzero(inside) < 4:
        raise InsufficientBeatsError(
            f"window at {win.start_s:.1f} s holds {np.count_nonzero(inside)} beats (< 4)")
    near = (peaks.times_s >= win.start_s - margin_s) & (peaks.times_s < win.stop_s + margin_s)
    return np.flatnonzero(near)


def edr_rrint(peaks: RPeakSeries, win: Window, margin_s: float = 8.0,
              band: tuple[float, float] = EDR_BAND, rel_floor: float = 1e-3) -> Surrogate:
    """Respiration from beat-to-beat interval modulation, at 4 Hz.

    Each interval is placed at its closing beat; intervals outside the
    physiological gap range are discarded before interpolation.
    """
    idx = _beats_for_window(peaks, win, margin_s)
    idx = idx[idx > 0]
    t = peaks.times_s[idx]
    gap = peaks.times_s[idx] - peaks.times_s[idx - 1]
    ok = (gap >= GAP_RANGE_S[0]) & (gap <= GAP_RANGE_S[1])
    t, gap = t[ok], gap[ok]
    if len(t) < 4:
        raise InsufficientBeatsError(f"window at {win.start_s:.1f} s has < 4 clean intervals")
    return _surrogate(t, gap, win, margin_s, band, rel_floor)


def edr_ramp(peaks: RPeakSeries, win: Window, margin_s: float = 8.0,
             band: tuple[float, float] = EDR_BAND, rel_floor: float = 1e-3) -> Surrogate:
    """Respiration from R-peak amplitude modulation, at 4 Hz."""
    idx = _beats_for_window(peaks, win, margin_s)
    return _surrogate(peaks.times_s[idx], peaks.amplitudes[idx], win, margin_s, band, rel_floor)
