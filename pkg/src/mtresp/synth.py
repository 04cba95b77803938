"""Synthetic ECG / chest accelerometer / respiration with exact ground truth.

Respiration is a unit sinusoid whose phase integrates a breaths-per-minute
profile. Heart beats are laid down one interval at a time with the interval
modulated by respiration (RSA); each beat carries a Mexican-hat QRS whose
height is also respiration-modulated. The accelerometer sees a static
gravity vector plus a respiration-driven tilt along a fixed random axis.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .signal_core import SampledSignal, save_signal

QRS_WIDTH_S = 0.080
WANDER_AMP = 0.05
WANDER_HZ = 0.05

SIGNAL_CHANNELS = ("ecg", "acc_x", "acc_y", "acc_z", "resp")


class SynthConfigError(ValueError):
    pass


def _profile(spec, duration_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Normalize a constant or ``[[t, value], ...]`` knot list."""
    if np.isscalar(spec):
        return np.array([0.0, duration_s]), np.array([float(spec), float(spec)])
    knots = np.asarray(spec, dtype=np.float64)
    if knots.ndim != 2 or knots.shape[1] != 2 or len(knots) < 1:
        raise SynthConfigError(f"profile must be a number or [[t, value], ...], got {spec!r}")
    if len(knots) > 1 and np.any(np.diff(knots[:, 0]) <= 0):
        raise SynthConfigError("profile knot times must increase")
    return knots[:, 0], knots[:, 1]


@dataclass
class SynthConfig:
    duration_s: float = 128.0
    fs: float = 700.0
    rr_profile: float | list = 15.0
    hr_profile: float | list = 60.0
    rsa_depth_ms: float = 100.0
    ramp_mod_pct: float = 15.0
    tilt_amp: float = 0.05
    activity_noise_sigma: float = 0.01
    ecg_noise_sigma: float = 0.01
    seed: int = 0
    subject_id: str = "S0"
    activities: list = field(default_factory=list)

    def __post_init__(self):
        if self.duration_s < 64:
            raise SynthConfigError("duration_s must be >= 64 s (two windows)")
        if self.fs <= 0:
            raise SynthConfigError("fs must be positive")
        _, rr = _profile(self.rr_profile, self.duration_s)
        _, hr = _profile(self.hr_profile, self.duration_s)
        if rr.min() < 6 or rr.max() > 40:
            raise SynthConfigError("rr_profile must stay within 6-40 breaths/min")
        if hr.min() < 40 or hr.max() > 180:
            raise SynthConfigError("hr_profile must stay within 40-180 bpm")
        for name in ("rsa_depth_ms", "ramp_mod_pct", "tilt_amp", "activity_noise_sigma", "ecg_noise_sigma"):
            if getattr(self, name) < 0:
                raise SynthConfigError(f"{name} must be non-negative")
        if self.ramp_mod_pct >= 100:
            raise SynthConfigError("ramp_mod_pct must be < 100")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


@dataclass
class SynthRecord:
    ecg: SampledSignal
    accel: SampledSignal
    resp_ref: SampledSignal
    beat_times_s: np.ndarray
    breath_peak_times_s: np.ndarray
    config: SynthConfig

    def combined(self) -> SampledSignal:
        x = np.vstack([self.ecg.samples, self.accel.samples, self.resp_ref.samples])
        return SampledSignal(x, self.ecg.fs, SIGNAL_CHANNELS)

    def truth(self) -> dict:
        return {
            "subject": self.config.subject_id,
            "beat_times_s": self.beat_times_s.tolist(),
            "breath_peak_times_s": self.breath_peak_times_s.tolist(),
        }


def mexican_hat(fs: float, width_s: float = QRS_WIDTH_S) -> np.ndarray:
    """QRS template: Ricker wavelet with +-3 sigma spanning ``width_s``."""
    sigma = width_s / 6.0
    half = int(np.ceil(4 * sigma * fs))
    t = np.arange(-half, half + 1) / fs
    u = (t / sigma) ** 2
    return (1 - u) * np.exp(-u / 2)


def generate(cfg: SynthConfig) -> SynthRecord:
    rng = np.random.default_rng(cfg.seed)
    fs = cfg.fs
    n = int(round(cfg.duration_s * fs))
    t = np.arange(n) / fs

    rr_t, rr_v = _profile(cfg.rr_profile, cfg.duration_s)
    hr_t, hr_v = _profile(cfg.hr_profile, cfg.duration_s)
    rr_bpm = np.interp(t, rr_t, rr_v)
    phase0 = rng.uniform(0, 2 * np.pi)
    # trapezoidal phase integration of the instantaneous breathing frequency
    f_inst = rr_bpm / 60.0
    phase = phase0 + 2 * np.pi * np.concatenate(([0.0], np.cumsum(0.5 * (f_inst[1:] + f_inst[:-1]) / fs)))
    resp = np.sin(phase)

    # breath peaks where phase = pi/2 (mod 2 pi)
    k0 = int(np.ceil((phase[0] - np.pi / 2) / (2 * np.pi)))
    k1 = int(np.floor((phase[-1] - np.pi / 2) / (2 * np.pi)))
    targets = np.pi / 2 + 2 * np.pi * np.arange(k0, k1 + 1)
    breath_peaks = np.interp(targets, phase, t)

    def resp_at(tt):
        return np.sin(np.interp(tt, t, phase))

    # beat times on the sample grid; interval = 60/hr + rsa * resp(t)
    rsa = cfg.rsa_depth_ms / 1000.0
    beats = []
    tb = rng.uniform(0.2, 0.2 + 60.0 / hr_v[0])
    while tb < cfg.duration_s - 0.1:
        beats.append(round(tb * fs) / fs)
        tb = beats[-1] + 60.0 / np.interp(tb, hr_t, hr_v) + rsa * resp_at(tb)
    beats = np.asarray(beats)

    tmpl = mexican_hat(fs)
    half = len(tmpl) // 2
    ecg = np.zeros(n + 2 * half)
    amps = 1.0 + cfg.ramp_mod_pct / 100.0 * resp_at(beats)
    for b, a in zip(np.rint(beats * fs).astype(int), amps):
        ecg[b:b + len(tmpl)] += a * tmpl
    ecg = ecg[half:half + n]
    ecg += WANDER_AMP * np.sin(2 * np.pi * WANDER_HZ * t + rng.uniform(0, 2 * np.pi))
    ecg += cfg.ecg_noise_sigma * rng.standard_normal(n)

    gravity = rng.normal(size=3)
    gravity /= np.linalg.norm(gravity)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    accel = gravity[:, None] + cfg.tilt_amp * axis[:, None] * resp[None, :]
    accel = accel + cfg.activity_noise_sigma * rng.standard_normal((3, n))

    return SynthRecord(
        ecg=SampledSignal(ecg[None, :], fs, ("ecg",)),
        accel=SampledSignal(accel, fs, ("acc_x", "acc_y", "acc_z")),
        resp_ref=SampledSignal(resp[None, :], fs, ("resp",)),
        beat_times_s=beats,
        breath_peak_times_s=breath_peaks,
        config=cfg,
    )


def default_subjects(n: int, duration_s: float = 128.0, seed: int = 0, **overrides) -> list[SynthConfig]:
    """A varied cohort: each subject gets its own RR and HR trajectories."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        n_knots = 4
        kt = np.linspace(0, duration_s, n_knots)
        rr = rng.uniform(8, 26, size=n_knots)
        hr = np.maximum(rng.uniform(62, 95, size=n_knots), 2.6 * rr + 10)
        kw = dict(
            duration_s=duration_s,
            rr_profile=np.column_stack([kt, rr]).tolist(),
            hr_profile=np.column_stack([kt, np.minimum(hr, 175)]).tolist(),
            seed=int(rng.integers(2**31)),
            subject_id=f"S{i + 1}",
        )
        kw.update(overrides)
        out.append(SynthConfig(**kw))
    return out


def write_subjects(cfgs: Sequence[SynthConfig], out_dir: str | Path, fmt: str = "bin") -> Path:
    """Generate each subject, write signals + truth, and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    subjects = []
    for cfg in cfgs:
        rec = generate(cfg)
        sig_name = f"{cfg.subject_id}.{fmt}"
        save_signal(rec.combined(), out_dir / sig_name)
        truth_name = f"{cfg.subject_id}_truth.json"
        (out_dir / truth_name).write_text(json.dumps(rec.truth()))
        subjects.append({
            "id": cfg.subject_id,
            "signals": sig_name,
            "truth": truth_name,
            "activities": cfg.activities,
            "fs": cfg.fs,
            "synth_config": asdict(cfg),
        })
    manifest = {"version": "mtresp-manifest/1", "subjects": subjects, "exclude": []}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def make_dataset(cfgs: Sequence[SynthConfig], include_raw: bool = False, drop_flagged: bool = False,
                 return_report: bool = False):
    """Generate every subject and run the full extraction chain.

    Average-RR targets come from the generator's breath peaks; waveform
    targets are the reference respiration at 4 Hz, z-normalized.
    """
    from .dataset import ExtractReport, WindowBatch, extract_subject

    parts, report = [], ExtractReport()
    for cfg in sorted(cfgs, key=lambda c: c.subject_id):
        rec = generate(cfg)
        batch, rep = extract_subject(rec.ecg, rec.accel, rec.resp_ref, rec.breath_peak_times_s,
                                     cfg.activities, cfg.subject_id, include_raw, drop_flagged)
        parts.append(batch)
        report.merge(rep)
    out = WindowBatch.concat(parts)
    return (out, report) if return_report else out
