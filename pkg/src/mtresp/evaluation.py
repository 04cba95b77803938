"""Error metrics, Bland-Altman agreement, grouped error tables and inference timing."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .breath_counting import BreathAnnotation

LOA_FACTOR = 1.96


def _pair(pred, ref) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    r = np.asarray(ref, dtype=np.float64).ravel()
    if p.shape != r.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {r.size} references")
    if p.size == 0:
        raise ValueError("empty input")
    return p, r


def mae(pred, ref) -> float:
    p, r = _pair(pred, ref)
    return float(np.mean(np.abs(p - r)))


def rmse(pred, ref) -> float:
    p, r = _pair(pred, ref)
    return float(np.sqrt(np.mean((p - r) ** 2)))


@dataclass
class PairedRR:
    """Instantaneous rates of matched breath intervals."""

    ref_rr: np.ndarray
    pred_rr: np.ndarray
    ref_mid_s: np.ndarray
    n_ref: int
    misses: int

    @property
    def n_pairs(self) -> int:
        return len(self.ref_rr)

    @property
    def miss_rate(self) -> float:
        return self.misses / self.n_ref if self.n_ref else 0.0


def instantaneous_pairing(pred_ann: BreathAnnotation, ref_ann: BreathAnnotation) -> PairedRR:
    """Pair every reference breath interval with the predicted interval that
    overlaps it the most; reference intervals without any overlap are misses."""
    rp = np.asarray(ref_ann.peak_times_s, dtype=np.float64)
    pp = np.asarray(pred_ann.peak_times_s, dtype=np.float64)
    r0, r1 = rp[:-1], rp[1:]
    p0, p1 = pp[:-1], pp[1:]
    n_ref = len(r0)
    if n_ref == 0 or len(p0) == 0:
        return PairedRR(np.zeros(0), np.zeros(0), np.zeros(0), n_ref, n_ref)
    ov = np.minimum(r1[:, None], p1[None, :]) - np.maximum(r0[:, None], p0[None, :])
    best = np.argmax(ov, axis=1)
    hit = ov[np.arange(n_ref), best] > 0
    ref_rr = 60.0 / (r1 - r0)
    pred_rr = 60.0 / (p1 - p0)
    return PairedRR(ref_rr[hit], pred_rr[best[hit]], 0.5 * (r0 + r1)[hit], n_ref, int(n_ref - hit.sum()))


@dataclass
class AgreementStats:
    bias: float
    loa_lo: float
    loa_hi: float
    pct_within: float
    n: int
    sd: float
    scatter: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 2)))  # (mean, difference)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("scatter")
        return d

    def scatter_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mean", "difference"])
            for m, d in self.scatter:
                w.writerow([repr(float(m)), repr(float(d))])


def bland_altman(pred, ref) -> AgreementStats:
    """Bias and 95% limits of agreement, using the population SD of the differences."""
    p, r = _pair(pred, ref)
    if p.size < 2:
        raise ValueError("Bland-Altman analysis needs at least two pairs")
    d = p - r
    bias = float(d.mean())
    sd = float(d.std())
    lo, hi = bias - LOA_FACTOR * sd, bias + LOA_FACTOR * sd
    within = float(100.0 * np.mean((d >= lo) & (d <= hi)))
    return AgreementStats(bias, lo, hi, within, int(p.size), sd, np.column_stack([(p + r) / 2, d]))


def grouped_errors(pred, ref, groups=None) -> dict:
    """Per-group MAE/RMSE plus the global row under ``"all"``."""
    p, r = _pair(pred, ref)
    if groups is None or len(groups) == 0:
        groups = ["all"] * p.size
    groups = [str(g) if g not in (None, "") else "unlabeled" for g in groups]
    if len(groups) != p.size:
        raise ValueError("one group label per sample required")
    out = {}
    for g in sorted(set(groups)):
        m = np.array([x == g for x in groups])
        out[g] = {"n": int(m.sum()), "mae": mae(p[m], r[m]), "rmse": rmse(p[m], r[m])}
    if "all" not in out:
        out["all"] = {"n": int(p.size), "mae": mae(p, r), "rmse": rmse(p, r)}
    return out


def write_error_rows(path: str | Path, ids, pred, ref, groups=None):
    """Per-sample errors, one row each, for external box plots."""
    p, r = _pair(pred, ref)
    groups = groups if groups is not None else [""] * p.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_id", "group", "pred", "ref", "error"])
        for i, g, a, b in zip(ids, groups, p, r):
            w.writerow([i, g, repr(float(a)), repr(float(b)), repr(float(a - b))])


def write_json(path: str | Path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


@dataclass
class BenchResult:
    params: int
    batch: int
    repeats: int
    ms_per_window_median: float
    ms_per_window_p95: float

    def as_dict(self) -> dict:
        return asdict(self)


def bench_inference(model, batch: np.ndarray, repeats: int = 10, warmup: int = 1) -> BenchResult:
    """Forward-only wall-clock timing in inference mode; warmup runs are discarded."""
    from .nn.layers import no_grad, param_count

    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    x = np.asarray(batch, dtype=np.float64)
    times = []
    with no_grad():
        for i in range(warmup + repeats):
            t0 = time.perf_counter()
            model.forward(x, training=False)
            dt = time.perf_counter() - t0
            if i >= warmup:
                times.append(dt)
    per_win = 1000.0 * np.asarray(times) / len(x)
    return BenchResult(param_count(model), len(x), repeats, float(np.median(per_win)),
                       float(np.percentile(per_win, 95)))
