"""Window batches: assembly from recordings and the ``RWN1`` file format."""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .adr import adr_extract
from .breath_counting import BreathAnnotation, UndefinedRateError, avg_rr, count_breaths
from .ecg_resp import InsufficientBeatsError, NoQRSError, detect_r_peaks, edr_ramp, edr_rrint
from .signal_core import (RESP_LEN, STRIDE_S, WINDOW_S, SampledSignal, SignalError, Window, resample,
                          window_stream, znorm)

CHANNELS = ("edr_rrint", "edr_ramp", "adr")
RAW_CHANNELS = ("ecg", "acc_pc1", "acc_pc2")
RAW_LEN = 2048
MAGIC = b"RWN1"


def _f32(a) -> np.ndarray:
    # values are kept float32-representable so the on-disk form round-trips exactly
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@dataclass
class WindowBatch:
    inputs: np.ndarray               # (N, 3, 128)
    wave_targets: np.ndarray         # (N, 128)
    rr_targets: np.ndarray           # (N,)
    flags: np.ndarray                # (N, 3) bool, degenerate channel guard
    meta: list[dict] = field(default_factory=list)
    raw_inputs: np.ndarray | None = None  # (N, 3, 2048)
    channels: tuple[str, ...] = CHANNELS

    def __len__(self):
        return len(self.rr_targets)

    def subset(self, idx) -> "WindowBatch":
        idx = np.asarray(idx, dtype=int)
        return WindowBatch(
            self.inputs[idx], self.wave_targets[idx], self.rr_targets[idx], self.flags[idx],
            [self.meta[i] for i in idx] if self.meta else [],
            None if self.raw_inputs is None else self.raw_inputs[idx],
            self.channels,
        )

    def model_inputs(self, input_kind: str) -> np.ndarray:
        if input_kind == "raw":
            if self.raw_inputs is None:
                raise ValueError("batch carries no raw inputs; extract with raw inputs enabled")
            return self.raw_inputs
        return self.inputs

    @staticmethod
    def concat(parts: Sequence["WindowBatch"]) -> "WindowBatch":
        parts = [p for p in parts if len(p)]
        if not parts:
            return empty_batch()
        has_raw = all(p.raw_inputs is not None for p in parts)
        return WindowBatch(
            np.concatenate([p.inputs for p in parts]),
            np.concatenate([p.wave_targets for p in parts]),
            np.concatenate([p.rr_targets for p in parts]),
            np.concatenate([p.flags for p in parts]),
            [m for p in parts for m in p.meta],
            np.concatenate([p.raw_inputs for p in parts]) if has_raw else None,
            parts[0].channels,
        )

    def window_ids(self) -> list[str]:
        if self.meta:
            return [m["window_id"] for m in self.meta]
        return [str(i) for i in range(len(self))]


def empty_batch(raw: bool = False) -> WindowBatch:
    return WindowBatch(np.zeros((0, 3, RESP_LEN)), np.zeros((0, RESP_LEN)), np.zeros(0),
                       np.zeros((0, 3), bool), [], np.zeros((0, 3, RAW_LEN)) if raw else None)


@dataclass
class ExtractReport:
    windows_total: int = 0
    kept: int = 0
    excluded: Counter = field(default_factory=Counter)
    flagged: Counter = field(default_factory=Counter)

    def merge(self, other: "ExtractReport"):
        self.windows_total += other.windows_total
        self.kept += other.kept
        self.excluded.update(other.excluded)
        self.flagged.update(other.flagged)

    def as_dict(self) -> dict:
        return {"windows_total": self.windows_total, "kept": self.kept,
                "excluded": dict(self.excluded), "flagged": dict(self.flagged)}


def majority_label(segments, start_s: float, stop_s: float, default: str = "") -> str:
    best, best_ov = default, 0.0
    tally: dict[str, float] = {}
    for s, e, label in segments:
        ov = min(e, stop_s) - max(s, start_s)
        if ov > 0:
            tally[label] = tally.get(label, 0.0) + ov
    for label, ov in tally.items():
        if ov > best_ov:
            best, best_ov = label, ov
    return best


def _raw_window(ecg: SampledSignal, accel: SampledSignal, win: Window) -> np.ndarray:
    e = ecg.slice_time(win.start_s, win.stop_s)
    a = accel.slice_time(win.start_s, win.stop_s).samples[:3]
    ac = a - a.mean(axis=1, keepdims=True)
    cov = ac @ ac.T / max(ac.shape[1], 1)
    _, vecs = np.linalg.eigh(cov)
    pcs = vecs[:, ::-1][:, :2].T @ ac
    stack = SampledSignal(np.vstack([e.samples[0], pcs]), ecg.fs, RAW_CHANNELS)
    low = resample(stack, RAW_LEN).samples
    return np.stack([znorm(r) for r in low])


def extract_subject(ecg: SampledSignal, accel: SampledSignal, resp: SampledSignal | None = None,
                    breath_peaks_s: np.ndarray | None = None, activities=(), subject: str = "S",
                    include_raw: bool = False, drop_flagged: bool = False,
                    win_s: float = WINDOW_S, stride_s: float = STRIDE_S) -> tuple[WindowBatch, ExtractReport]:
    """Cut one recording into windows of [EDR-RRint, EDR-Ramp, ADR] inputs plus targets.

    The average-RR target comes from ground-truth breath peaks when given,
    otherwise from counting on the reference respiration.
    """
    rep = ExtractReport()
    if ecg.fs != accel.fs or (resp is not None and resp.fs != ecg.fs):
        raise SignalError(f"{subject}: sampling rates differ between ECG, accelerometer and respiration")
    windows = window_stream(ecg, win_s, stride_s)
    rep.windows_total = len(windows)
    try:
        peaks = detect_r_peaks(ecg)
    except NoQRSError:
        rep.excluded["no_qrs"] += len(windows)
        return empty_batch(include_raw), rep

    rows = []
    for w in windows:
        try:
            s_rri = edr_rrint(peaks, w)
            s_ramp = edr_ramp(peaks, w)
        except InsufficientBeatsError:
            rep.excluded["insufficient_beats"] += 1
            continue
        s_adr = adr_extract(accel, w)
        flags = np.array([s_rri.degenerate, s_ramp.degenerate, s_adr.degenerate])
        for name, f in zip(CHANNELS, flags):
            if f:
                rep.flagged[name] += 1
        if drop_flagged and flags.any():
            rep.excluded["flagged"] += 1
            continue

        if resp is not None:
            seg = resp.slice_time(w.start_s, w.stop_s)
            wave_t = znorm(resample(seg, RESP_LEN).samples[0])
        else:
            wave_t = np.zeros(RESP_LEN)
        try:
            if breath_peaks_s is not None:
                bp = breath_peaks_s[(breath_peaks_s >= w.start_s) & (breath_peaks_s < w.stop_s)]
                ref_ann = BreathAnnotation.from_peaks(bp)
            elif resp is not None:
                ref_ann = count_breaths(wave_t, t0=w.start_s)
            else:
                raise UndefinedRateError("no reference")
            rr_t = avg_rr(ref_ann)
        except UndefinedRateError:
            rep.excluded["no_target"] += 1
            continue
        if not 0 < rr_t < 100:
            rep.excluded["no_target"] += 1
            continue

        raw = _raw_window(ecg, accel, w) if include_raw else None
        meta = {"window_id": f"{subject}:{w.start_s:g}", "subject": subject, "start_s": w.start_s,
                "activity": majority_label(activities, w.start_s, w.stop_s),
                "ref_peaks_s": [float(t) for t in ref_ann.peak_times_s]}
        rows.append((np.stack([s_rri.wave, s_ramp.wave, s_adr.wave]), wave_t, rr_t, flags, meta, raw))

    rep.kept = len(rows)
    if not rows:
        return empty_batch(include_raw), rep
    batch = WindowBatch(
        _f32([r[0] for r in rows]), _f32([r[1] for r in rows]), _f32([r[2] for r in rows]),
        np.array([r[3] for r in rows], dtype=bool), [r[4] for r in rows],
        _f32([r[5] for r in rows]) if include_raw else None,
    )
    return batch, rep


# --- RWN1 ---------------------------------------------------------------

def write_windows(batch: WindowBatch, path: str | Path, report: dict | None = None):
    """``RWN1`` + u64 header length + JSON header + float32 blocks
    (inputs, [raw inputs], waveform targets, scalar targets, flags)."""
    header = {
        "count": len(batch),
        "channels": list(batch.channels),
        "shapes": {
            "inputs": list(batch.inputs.shape),
            "raw_inputs": list(batch.raw_inputs.shape) if batch.raw_inputs is not None else None,
            "wave_targets": list(batch.wave_targets.shape),
            "rr_targets": list(batch.rr_targets.shape),
            "flags": list(batch.flags.shape),
        },
        "raw_channels": list(RAW_CHANNELS) if batch.raw_inputs is not None else None,
        "meta": batch.meta,
        "report": report,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        blocks = [batch.inputs]
        if batch.raw_inputs is not None:
            blocks.append(batch.raw_inputs)
        blocks += [batch.wave_targets, batch.rr_targets, batch.flags.astype(np.float32)]
        for b in blocks:
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def read_windows(path: str | Path) -> WindowBatch:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise SignalError(f"{path}: not an RWN1 windows file")
    (n,) = struct.unpack_from("<Q", raw, 4)
    header = json.loads(raw[12:12 + n])
    off = 12 + n
    shapes = header["shapes"]

    def take(shape):
        nonlocal off
        cnt = int(np.prod(shape))
        if off + 4 * cnt > len(raw):
            raise SignalError(f"{path}: truncated data block")
        a = np.frombuffer(raw, dtype="<f4", count=cnt, offset=off).reshape(shape).astype(np.float64)
        off += 4 * cnt
        return a

    inputs = take(shapes["inputs"])
    raw_in = take(shapes["raw_inputs"]) if shapes.get("raw_inputs") else None
    wave = take(shapes["wave_targets"])
    rr = take(shapes["rr_targets"])
    flags = take(shapes["flags"]).astype(bool)
    return WindowBatch(inputs, wave, rr, flags, header.get("meta") or [], raw_in, tuple(header["channels"]))


def read_windows_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise SignalError(f"{path}: not an RWN1 windows file")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n))
