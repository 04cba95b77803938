import numpy as np
import pytest
from numpy.testing import assert_allclose

from mtresp.ecg_resp import (InsufficientBeatsError, NoQRSError, RPeakSeries, detect_r_peaks, edr_ramp,
                             edr_rrint)
from mtresp.signal_core import RESP_FS, SampledSignal, Window
from mtresp.synth import SynthConfig, generate


def dominant_hz(w):
    spec = np.abs(np.fft.rfft(w - w.mean()))
    return np.argmax(spec) * RESP_FS / len(w)


BIN = RESP_FS / 128


@pytest.fixture(scope="module")
def rec60():
    cfg = SynthConfig(duration_s=64, hr_profile=60, rr_profile=15, rsa_depth_ms=0, ramp_mod_pct=15, seed=1)
    return generate(cfg)


def test_constant_60bpm_count_and_timing(rec60):
    ecg = rec60.ecg.slice_time(0, 32)
    pk = detect_r_peaks(ecg)
    truth = rec60.beat_times_s[rec60.beat_times_s < 32]
    assert abs(len(pk) - 32) <= 1
    d = np.abs(pk.times_s[:, None] - truth[None, :]).min(axis=1)
    assert np.all(d <= 0.010)


def test_times_increase_and_refractory(rec60):
    pk = detect_r_peaks(rec60.ecg)
    assert np.all(np.diff(pk.times_s) >= 0.25)


def test_all_zero_raises():
    with pytest.raises(NoQRSError):
        detect_r_peaks(SampledSignal.single(np.zeros(7000), 700.0))


def test_nonfinite_raises():
    x = np.zeros(7000)
    x[5] = np.inf
    with pytest.raises(NoQRSError):
        detect_r_peaks(SampledSignal.single(x, 700.0))


def test_rsa_sequence_recovered():
    cfg = SynthConfig(duration_s=64, hr_profile=60, rr_profile=15, rsa_depth_ms=100, seed=3)
    rec = generate(cfg)
    pk = detect_r_peaks(rec.ecg)
    assert len(pk) == len(rec.beat_times_s)
    r = np.corrcoef(np.diff(pk.times_s), np.diff(rec.beat_times_s))[0, 1]
    assert r > 0.95


def test_shift_by_whole_samples(rec60):
    x = rec60.ecg.samples[0]
    k = 37
    base = detect_r_peaks(SampledSignal.single(x[:-k], 700.0)).times_s
    shifted = detect_r_peaks(SampledSignal.single(np.concatenate([np.full(k, x[0]), x[:-k]]), 700.0)).times_s
    assert_allclose(shifted, base + k / 700.0, atol=1e-12)


def _periodic_peaks(n, period=1.0, rr=None, amp=None):
    t = np.arange(n) * period + 0.3
    if rr is not None:
        t = np.concatenate(([0.3], 0.3 + np.cumsum(rr)))[:n]
    a = np.ones(n) if amp is None else amp
    return RPeakSeries(t, a, 700.0)


class TestEDR:
    def test_rrint_dominant_frequency(self):
        # beat-by-beat: interval = 1 s + 0.1 s * sin(2 pi 0.25 t)
        t = [0.0]
        while t[-1] < 70:
            t.append(t[-1] + 1.0 + 0.1 * np.sin(2 * np.pi * 0.25 * t[-1]))
        pk = RPeakSeries(np.array(t), np.ones(len(t)), 700.0)
        s = edr_rrint(pk, Window(16.0))
        assert len(s.wave) == 128 and not s.degenerate
        assert abs(dominant_hz(s.wave) - 0.25) <= BIN
        assert abs(s.wave.mean()) < 1e-9 and abs(s.wave.var() - 1) < 1e-6

    def test_rrint_constant_is_degenerate(self):
        s = edr_rrint(_periodic_peaks(80), Window(16.0))
        assert s.degenerate
        assert not s.wave.any()

    def test_three_peaks_insufficient(self):
        pk = RPeakSeries(np.array([1.0, 2.0, 3.0]), np.ones(3), 700.0)
        with pytest.raises(InsufficientBeatsError):
            edr_rrint(pk, Window(0.0))
        with pytest.raises(InsufficientBeatsError):
            edr_ramp(pk, Window(0.0))

    def test_ramp_dominant_frequency(self):
        t = np.arange(0.0, 80.0, 0.8)
        pk = RPeakSeries(t, 1 + 0.2 * np.sin(2 * np.pi * 0.2 * t), 700.0)
        s = edr_ramp(pk, Window(20.0))
        assert abs(dominant_hz(s.wave) - 0.2) <= BIN

    def test_ramp_with_amplitude_noise(self):
        rng = np.random.default_rng(4)
        t = np.arange(0.0, 80.0, 0.8)
        amp = 1 + 0.2 * np.sin(2 * np.pi * 0.2 * t) + 0.02 * rng.standard_normal(len(t))
        s = edr_ramp(RPeakSeries(t, amp, 700.0), Window(20.0))
        assert abs(dominant_hz(s.wave) - 0.2) <= BIN

    def test_ramp_constant_is_degenerate(self):
        s = edr_ramp(_periodic_peaks(80, 0.8, amp=np.full(80, 1.3)), Window(16.0))
        assert s.degenerate and not s.wave.any()

    def test_window_at_recording_edge(self, rec60):
        pk = detect_r_peaks(rec60.ecg)
        for start in (0.0, 32.0):
            for fn in (edr_rrint, edr_ramp):
                s = fn(pk, Window(start))
                assert s.wave.shape == (128,)
                assert np.all(np.isfinite(s.wave))


def test_rpeak_csv_roundtrip(tmp_path, rec60):
    pk = detect_r_peaks(rec60.ecg)
    p = tmp_path / "r.csv"
    pk.to_csv(p)
    assert p.read_text().splitlines()[0] == "time_s,amplitude"
    back = RPeakSeries.from_csv(p, 700.0)
    assert_allclose(back.times_s, pk.times_s)
    assert_allclose(back.amplitudes, pk.amplitudes)
