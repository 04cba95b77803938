"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict table is
printed in the terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest

from mtresp.breath_counting import avg_rr, count_breaths, inst_rr
from mtresp.cli import main
from mtresp.evaluation import bland_altman
from mtresp.models import CONFS, TOY, build_conf
from mtresp.nn import (BatchNorm1d, Conv1d, ConvTranspose1d, Dense, InceptionRes, LeakyReLU, grad_check,
                       param_count, smooth_l1)
from mtresp.nn import functional as F
from mtresp.nn.losses import smooth_l1_elementwise
from mtresp.pipeline import compute_metrics, prediction_rows, reference_rows
from mtresp.synth import default_subjects, make_dataset
from mtresp.training import TrainConfig, lr_schedule, split_dataset, train


def test_1_gradients(verdict):
    t0 = time.perf_counter()
    cases = {
        "conv1d": (Conv1d(3, 4, 3, stride=2, padding=1), (2, 3, 16)),
        "conv_transpose1d": (ConvTranspose1d(3, 2, 3, 2, 1, 1), (2, 3, 8)),
        "batch_norm1d": (BatchNorm1d(3), (4, 3, 8)),
        "leaky_relu": (LeakyReLU(), (2, 3, 8)),
        "inception_res": (InceptionRes(4), (3, 4, 16)),
        "dense": (Dense(7, 2), (3, 7)),
        "conf_e_toy": (build_conf("E", seed=0, widths=TOY).joint(), (4, 3, 128)),
    }
    errs = {k: grad_check(layer, shape, seed=1, h=1e-5, max_entries=64) for k, (layer, shape) in cases.items()}
    dt = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] < 1e-4 and dt < 60
    verdict(1, ok, f"max rel err {errs[worst]:.2e} ({worst}), {dt:.1f} s")
    assert ok, errs


def test_2_adjointness(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        B, C, O = rng.integers(1, 4), rng.integers(1, 6), rng.integers(1, 6)
        k, s = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        p = int(rng.integers(0, k))
        L = int(rng.integers(k, 40))
        x = rng.standard_normal((B, C, L))
        w = rng.standard_normal((O, C, k))
        y = F.conv1d(x, w, None, s, p)
        g = rng.standard_normal(y.shape)
        xt = F.conv1d_input_grad(g, w, L, s, p)
        lhs, rhs = np.vdot(y, g), np.vdot(x, xt)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
        # the transposed layer itself, with its own output length formula
        op = int(rng.integers(0, s))
        yt = F.conv_transpose1d(g, w, None, s, p, op)
        xs = rng.standard_normal(yt.shape)
        worst = max(worst, abs(np.vdot(yt, xs) - np.vdot(g, F.conv1d(xs, w, None, s, p)[..., :g.shape[2]]))
                    / max(1.0, abs(np.vdot(yt, xs))))
    verdict(2, worst < 1e-10, f"max discrepancy {worst:.1e} over 50 draws")
    assert worst < 1e-10


def test_3_smooth_l1(verdict):
    vals = [float(smooth_l1_elementwise(np.array(d))) for d in (0.5, 1.0, 3.0)]
    exact = vals == [0.125, 0.5, 2.5]
    eps = 1e-9
    cont = all(abs(float(smooth_l1_elementwise(np.array(s * (1 + e)))) - 0.5) < 2e-9
               for s in (1, -1) for e in (eps, -eps))
    loss, _ = smooth_l1(np.array([[0.5, 3.0]]), np.zeros((1, 2)))
    ok = exact and cont and loss == 2.625
    verdict(3, ok, f"values {vals}, continuous at |d|=1: {cont}")
    assert ok


def test_4_lr_schedule(verdict):
    adaptive = all(lr_schedule("adaptive", e) == 0.01 for e in range(1, 21))
    adaptive &= all(lr_schedule("adaptive", e) == 1e-4 for e in range(21, 101))
    fixed = TrainConfig("C").lr_policy == "fixed" and all(lr_schedule("fixed", e) == 1e-4 for e in range(1, 101))
    verdict(4, adaptive and fixed, "adaptive 0.01 -> 1e-4 after epoch 20; CONF-C fixed 1e-4")
    assert adaptive and fixed


def test_5_counting(verdict):
    t = np.arange(128) / 4.0
    worst_avg = worst_inst = 0.0
    for f in np.round(np.arange(0.1, 0.601, 0.05), 2):
        for phase in (0.0, 0.3, 1.1):
            ann = count_breaths(np.sin(2 * np.pi * f * t + phase))
            if ann.n_peaks < 2:
                continue
            worst_avg = max(worst_avg, abs(avg_rr(ann) - 60 * f))
            worst_inst = max(worst_inst, float(np.max(np.abs(inst_rr(ann) - 60 * f))))
    rng = np.random.default_rng(5)
    x = np.sin(2 * np.pi * 0.23 * t) + 0.1 * rng.standard_normal(128)
    ref = count_breaths(x).peak_times_s
    invariant = all(np.array_equal(count_breaths(a * x + b).peak_times_s, ref)
                    for a, b in ((0.01, 0.0), (37.0, 0.0), (1.0, -5.0), (2.5, 100.0)))
    ok = worst_avg <= 0.5 and worst_inst <= 0.5 and invariant
    verdict(5, ok, f"avg err {worst_avg:.3f}, inst err {worst_inst:.3f} BrPM, invariance {invariant}")
    assert ok


def test_6_extraction_recovery(verdict):
    t0 = time.perf_counter()
    cfgs = default_subjects(3, 128.0, seed=6, rsa_depth_ms=100, ramp_mod_pct=15, tilt_amp=0.05,
                            ecg_noise_sigma=0.01)
    batch = make_dataset(cfgs)
    maes = {}
    for c, name in enumerate(batch.channels):
        err = []
        for k in range(len(batch)):
            ann = count_breaths(batch.inputs[k, c])
            err.append(abs(avg_rr(ann) - batch.rr_targets[k]) if ann.n_peaks >= 2 else math.inf)
        maes[name] = float(np.mean(err))
    dt = time.perf_counter() - t0
    ok = len(batch) >= 100 and max(maes.values()) <= 1.5 and dt < 120
    verdict(6, ok, f"{len(batch)} windows, MAE " + ", ".join(f"{k} {v:.2f}" for k, v in maes.items())
            + f" BrPM, {dt:.0f} s")
    assert ok


CRIT7_BATCH = 32


@pytest.mark.slow
def test_7_end_to_end_training(verdict):
    t0 = time.perf_counter()
    data = make_dataset(default_subjects(13, 128.0, seed=3))
    tr, te = split_dataset(len(data), 0.8, seed=0)
    model, hist = train(build_conf("E", seed=0), data.subset(tr),
                        TrainConfig("E", epochs=30, batch_size=CRIT7_BATCH, seed=0))
    test = data.subset(te)
    m = compute_metrics(prediction_rows(model, test), reference_rows(test))
    dt = time.perf_counter() - t0
    ratio = hist.loss_total[-1] / hist.loss_total[0]
    a, b, c = ratio <= 0.4, m["avg_rr"]["mae"] <= 2.0, m["inst_rr"]["mae"] <= 2.5
    ok = len(data) >= 600 and a and b and c and dt < 1800
    verdict(7, ok, f"{len(data)} windows, loss ratio {ratio:.3f}, avg MAE {m['avg_rr']['mae']:.2f}, "
                   f"inst MAE {m['inst_rr']['mae']:.2f} BrPM, {dt / 60:.1f} min")
    assert len(data) >= 600
    assert a, f"final/first loss {ratio:.3f}"
    assert b, m["avg_rr"]
    assert c, m["inst_rr"]
    assert dt < 1800


def test_8_head_independence(verdict):
    m = build_conf("E", seed=4)
    x = np.random.default_rng(3).normal(size=(3, 3, 128))
    w0, r0 = m.forward(x)
    for p in m.decoder.params():
        p.value[...] = 0
    w1, r1 = m.forward(x)
    for p in m.head.params():
        p.value[...] = 0
    w2, r2 = m.forward(x)
    ok = (np.array_equal(r1, r0) and not np.array_equal(w1, w0)
          and np.array_equal(w2, w1) and not np.array_equal(r2, r1))
    verdict(8, ok, "zeroing decoder moves only the waveform; zeroing head moves only the rate")
    assert ok


def _closed_form(conf_id):
    conv = lambda ci, co, k: ci * co * k + co  # noqa: E731
    incres = lambda c: conv(c, c // 2, 1) + conv(c, c // 2, 15) + 2 * c  # noqa: E731
    block = lambda ci, co, k: conv(ci, co, k) + 2 * co + incres(co)  # noqa: E731
    spec = CONFS[conf_id]
    total, cin = 0, 3
    for i in range(10 if spec.input_kind == "raw" else 6):
        total += block(cin, min(32 * 2 ** i, 1024), 3)
        cin = min(32 * 2 ** i, 1024)
    if spec.wave_head:
        d = cin
        for i in range(6):
            total += block(d, max(512 // 2 ** i, 16), 3)
            d = max(512 // 2 ** i, 16)
        total += conv(d, 1, 1)
    if spec.rr_head:
        total += block(cin, 128, 4) + 128 + 1
    return total


def test_9_parameter_count(verdict):
    units = (param_count(Conv1d(5, 7, 3)) == 5 * 7 * 3 + 7 and param_count(Dense(9, 4)) == 9 * 4 + 4
             and param_count(ConvTranspose1d(6, 3, 3, 2, 1, 1)) == 6 * 3 * 3 + 3
             and param_count(BatchNorm1d(8)) == 16)
    counts = {c: param_count(build_conf(c, seed=0)) for c in "ABCDE"}
    match = all(counts[c] == _closed_form(c) for c in counts)
    ok = 15e6 <= counts["E"] <= 35e6 and units and match
    verdict(9, ok, "params " + ", ".join(f"{c} {n / 1e6:.2f}M" for c, n in counts.items()))
    assert ok


def _ba_oracle(p, r):
    n = s = ss = 0.0
    for a, b in zip(p, r):
        n, s, ss = n + 1, s + (a - b), ss + (a - b) ** 2
    bias = s / n
    sd = math.sqrt(max(ss / n - bias * bias, 0.0))
    lo, hi = bias - 1.96 * sd, bias + 1.96 * sd
    return bias, lo, hi, 100.0 * sum(lo <= a - b <= hi for a, b in zip(p, r)) / n


def test_10_bland_altman(verdict):
    rng = np.random.default_rng(10)
    p = rng.normal(16, 5, 1000)
    r = p - rng.normal(0.9, 4.0, 1000)
    s = bland_altman(p, r)
    o = _ba_oracle(p, r)
    dev = max(abs(a - b) for a, b in zip((s.bias, s.loa_lo, s.loa_hi, s.pct_within), o))
    pi, ri = rng.integers(0, 40, size=(2, 300)).astype(float)
    s0, s1 = bland_altman(pi, ri), bland_altman(pi + 3.0, ri)
    shift = (s1.bias == s0.bias + 3 and s1.loa_lo == s0.loa_lo + 3 and s1.loa_hi == s0.loa_hi + 3
             and s1.pct_within == s0.pct_within)
    ok = dev < 1e-9 and shift
    verdict(10, ok, f"oracle deviation {dev:.1e}, translation exact: {shift}")
    assert ok


def _pipeline(d):
    (d / "synth.json").write_text(json.dumps({"n_subjects": 2, "duration_s": 64, "seed": 11}))
    steps = [
        ["synth", "--config", str(d / "synth.json"), "--out", str(d / "data")],
        ["extract", "--manifest", str(d / "data" / "manifest.json"), "--out", str(d / "w.bin"),
         "--ref", str(d / "ref.csv")],
        ["train", "--conf", "E", "--windows", str(d / "w.bin"), "--epochs", "3", "--seed", "7",
         "--out", str(d / "m.ckpt")],
        ["infer", "--model", str(d / "m.ckpt"), "--windows", str(d / "w.bin"), "--subset", "test",
         "--out", str(d / "pred.csv")],
        ["eval", "--pred", str(d / "pred.csv"), "--ref", str(d / "ref.csv"), "--out", str(d / "metrics.json")],
    ]
    codes = [main(s) for s in steps]
    assert codes == [0] * len(steps), codes
    return (d / "metrics.json").read_bytes()


def test_11_determinism(verdict, tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    first, second = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
    ok = first == second and len(first) > 0
    verdict(11, ok, f"metrics.json identical across runs ({len(first)} bytes)")
    assert ok


def test_12_bench(verdict, tmp_path, capsys):
    rc_all = main(["bench", "--conf", "all", "--batch", "2", "--repeats", "2", "--out", str(tmp_path / "all.json")])
    rows = json.loads((tmp_path / "all.json").read_text())
    fields = {"params", "ms_per_window_median", "ms_per_window_p95"}
    complete = sorted(r["conf"] for r in rows) == list("ABCDE") and all(fields <= set(r) for r in rows)
    rc_e = main(["bench", "--conf", "E", "--batch", "128", "--repeats", "1", "--out", str(tmp_path / "e.json")])
    e = json.loads((tmp_path / "e.json").read_text())
    ok = rc_all == 0 and complete and rc_e == 0 and e["batch"] == 128
    verdict(12, ok, f"all five CONFs reported; CONF-E batch 128 median {e['ms_per_window_median']:.2f} ms/window")
    assert ok
