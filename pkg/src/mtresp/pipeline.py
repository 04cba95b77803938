"""Glue between trained models, per-window RR tables and the metrics report.

RR tables are CSV with columns ``window_id,avg_rr,inst_rr`` (``inst_rr`` is a
semicolon-separated list) followed by the extension columns
``peak_times_s,subject,activity``. Readers only require the first two.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .breath_counting import BreathAnnotation, UndefinedRateError, count_breaths
from .dataset import WindowBatch
from .evaluation import bland_altman, grouped_errors, instantaneous_pairing, mae, rmse
from .training import predict

RR_COLUMNS = ("window_id", "avg_rr", "inst_rr", "peak_times_s", "subject", "activity")


@dataclass
class RRRow:
    window_id: str
    avg_rr: float
    inst_rr: list = field(default_factory=list)
    peak_times_s: list | None = None
    subject: str = ""
    activity: str = ""


def _fmt_list(v) -> str:
    return ";".join(repr(float(x)) for x in v)


def _parse_list(s: str) -> list[float]:
    s = (s or "").strip()
    return [float(x) for x in s.split(";") if x.strip()] if s else []


def write_rr_csv(rows: list[RRRow], path: str | Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RR_COLUMNS)
        for r in rows:
            avg = "" if r.avg_rr is None or not np.isfinite(r.avg_rr) else repr(float(r.avg_rr))
            w.writerow([r.window_id, avg, _fmt_list(r.inst_rr),
                        "" if r.peak_times_s is None else _fmt_list(r.peak_times_s), r.subject, r.activity])


def read_rr_csv(path: str | Path) -> list[RRRow]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"RR table not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"window_id", "avg_rr"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must start with window_id,avg_rr")
        rows = []
        for line, rec in enumerate(reader, start=2):
            try:
                avg = float(rec["avg_rr"]) if rec["avg_rr"] not in ("", None) else float("nan")
                peaks = rec.get("peak_times_s")
                rows.append(RRRow(rec["window_id"], avg, _parse_list(rec.get("inst_rr")),
                                  _parse_list(peaks) if peaks else None,
                                  rec.get("subject") or "", rec.get("activity") or ""))
            except ValueError as e:
                raise ValueError(f"{path}:{line}: {e}") from None
    return rows


def _inst(ann: BreathAnnotation) -> list[float]:
    return [float(x) for x in ann.inst_rr_bpm]


def prediction_rows(model, batch: WindowBatch) -> list[RRRow]:
    """Average RR from the rate head (or from counting when the model has none)
    and instantaneous RR from counting on the decoded waveform."""
    wave, rr = predict(model, batch)
    rows = []
    for i, meta in enumerate(batch.meta or [{} for _ in range(len(batch))]):
        wid = meta.get("window_id", str(i))
        start = float(meta.get("start_s", 0.0))
        inst, peaks, avg = [], None, float("nan")
        if wave is not None:
            ann = count_breaths(wave[i], t0=start)
            inst, peaks = _inst(ann), [float(t) for t in ann.peak_times_s]
            if rr is None and ann.avg_rr_bpm is not None and np.isfinite(ann.avg_rr_bpm):
                avg = float(ann.avg_rr_bpm)
        if rr is not None:
            avg = float(rr[i])
        rows.append(RRRow(wid, avg, inst, peaks, meta.get("subject", ""), meta.get("activity", "")))
    return rows


def reference_rows(batch: WindowBatch) -> list[RRRow]:
    rows = []
    for i, meta in enumerate(batch.meta or [{} for _ in range(len(batch))]):
        peaks = meta.get("ref_peaks_s")
        if peaks is None:
            ann = count_breaths(batch.wave_targets[i], t0=float(meta.get("start_s", 0.0)))
        else:
            ann = BreathAnnotation.from_peaks(peaks)
        rows.append(RRRow(meta.get("window_id", str(i)), float(batch.rr_targets[i]), _inst(ann),
                          [float(t) for t in ann.peak_times_s], meta.get("subject", ""), meta.get("activity", "")))
    return rows


def _pair_inst(p: RRRow, r: RRRow):
    """Matched (pred, ref) instantaneous rates plus the number of missed reference intervals."""
    if p.peak_times_s is not None and r.peak_times_s is not None:
        pr = instantaneous_pairing(BreathAnnotation.from_peaks(p.peak_times_s),
                                   BreathAnnotation.from_peaks(r.peak_times_s))
        return pr.pred_rr, pr.ref_rr, pr.misses
    # no timing information: pair in order
    k = min(len(p.inst_rr), len(r.inst_rr))
    return np.asarray(p.inst_rr[:k]), np.asarray(r.inst_rr[:k]), len(r.inst_rr) - k


def compute_metrics(pred: list[RRRow], ref: list[RRRow], group_key: str | None = None) -> dict:
    ref_by_id = {r.window_id: r for r in ref}
    missing = [p.window_id for p in pred if p.window_id not in ref_by_id]
    if missing:
        raise ValueError(f"{len(missing)} predicted windows have no reference (first: {missing[0]})")
    pairs = [(p, ref_by_id[p.window_id]) for p in pred]
    avg_pairs = [(p, r) for p, r in pairs if np.isfinite(p.avg_rr) and np.isfinite(r.avg_rr)]
    out: dict = {"n_windows": len(pairs)}
    if avg_pairs:
        pa = np.array([p.avg_rr for p, _ in avg_pairs])
        ra = np.array([r.avg_rr for _, r in avg_pairs])
        out["avg_rr"] = {"n": len(pa), "mae": mae(pa, ra), "rmse": rmse(pa, ra)}
        if len(pa) >= 2:
            out["bland_altman"] = bland_altman(pa, ra).as_dict()
        if group_key:
            labels = [getattr(r, group_key, "") or getattr(p, group_key, "") for p, r in avg_pairs]
            out["avg_rr_by_" + group_key] = grouped_errors(pa, ra, labels)
    ip, ir, misses, n_ref = [], [], 0, 0
    for p, r in pairs:
        a, b, m = _pair_inst(p, r)
        ip.append(a)
        ir.append(b)
        misses += m
        n_ref += len(r.inst_rr)
    ip = np.concatenate(ip) if ip else np.zeros(0)
    ir = np.concatenate(ir) if ir else np.zeros(0)
    inst = {"n_pairs": int(ip.size), "misses": int(misses), "n_ref_intervals": int(n_ref)}
    if ip.size:
        inst.update(mae=mae(ip, ir), rmse=rmse(ip, ir))
    out["inst_rr"] = inst
    return out


__all__ = ["RRRow", "compute_metrics", "prediction_rows", "read_rr_csv", "reference_rows", "write_rr_csv",
           "UndefinedRateError"]
