"""Accelerometer-derived respiration (ADR) from a 3-axis chest sensor."""

from __future__ import annotations

import numpy as np

from .ecg_resp import Surrogate
from .signal_core import RESP_FS, RESP_LEN, SampledSignal, SignalError, Window, bandpass_array, resample, znorm

ADR_BAND = (0.1, 1.0)


def principal_axis(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project ``(3, n)`` data onto its first principal component.

    The sign is chosen so the projection correlates non-negatively with the
    highest-variance input axis. Returns ``(projection, unit_direction)``.
    """
    xc = x - x.mean(axis=1, keepdims=True)
    cov = xc @ xc.T / xc.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    v = evecs[:, -1]
    proj = v @ xc
    ref = int(np.argmax(np.diag(cov)))
    if proj @ xc[ref] < 0:
        v, proj = -v, -proj
    return proj, v


def adr_extract(accel: SampledSignal, win: Window, margin_s: float = 8.0,
                band: tuple[float, float] = ADR_BAND, eps: float = 1e-12) -> Surrogate:
    """Band-pass each axis, bring it to 4 Hz, take the first principal component."""
    if accel.n_channels < 3:
        raise SignalError(f"ADR needs 3 accelerometer axes, got {accel.n_channels}")
    if accel.fs < 32:
        raise SignalError(f"accelerometer rate {accel.fs} Hz below 32 Hz")
    fs = accel.fs
    # extend by whole seconds so the 4 Hz grid stays aligned with the window start
    pre = float(np.floor(min(margin_s, win.start_s - accel.t0)))
    post = float(np.floor(min(margin_s, accel.t0 + accel.duration - win.stop_s)))
    pre, post = max(pre, 0.0), max(post, 0.0)
    seg = accel.slice_time(win.start_s - pre, win.stop_s + post)
    x = seg.samples[:3]
    n_out = int(round((win.length_s + pre + post) * RESP_FS))
    if x.shape[1] < int(round(win.length_s * fs)):
        raise SignalError(f"accelerometer does not cover window at {win.start_s:.1f} s")
    if np.max(np.abs(x - x.mean(axis=1, keepdims=True))) < eps:
        return Surrogate(np.zeros(RESP_LEN), True)
    filt = bandpass_array(x, fs, *band, order=4)
    low = resample(SampledSignal(filt, fs, ("x", "y", "z")), n_out).samples
    i0 = int(round(pre * RESP_FS))
    w = low[:, i0:i0 + RESP_LEN]
    if np.max(w.var(axis=1)) < eps:
        return Surrogate(np.zeros(RESP_LEN), True)
    proj, _ = principal_axis(w)
    z = znorm(proj)
    return Surrogate(z, not z.any())
