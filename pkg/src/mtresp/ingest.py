"""Dataset manifests and window assembly across subjects.

A manifest is JSON::

    {"version": "mtresp-manifest/1",
     "subjects": [{"id": "S1", "signals": "S1.bin", "truth": "S1_truth.json",
                   "activities": [[0, 60, "sitting"], ...], "fs": 700}],
     "exclude": ["S6"]}

Paths are relative to the manifest. Signal files carry channels ``ecg``,
``acc_x``, ``acc_y``, ``acc_z`` and optionally ``resp``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import ExtractReport, WindowBatch, extract_subject
from .signal_core import SignalError, load_signal

MANIFEST_VERSIONS = ("mtresp-manifest/1",)
ACCEL_CHANNELS = ("acc_x", "acc_y", "acc_z")


class ManifestError(SignalError):
    pass


@dataclass
class SubjectEntry:
    id: str
    signals: Path
    activities: list = field(default_factory=list)
    truth: Path | None = None
    fs: float | None = None


@dataclass
class Manifest:
    version: str
    subjects: list[SubjectEntry]
    exclude: list[str] = field(default_factory=list)
    root: Path = Path(".")

    def active(self) -> list[SubjectEntry]:
        skip = set(self.exclude)
        return sorted((s for s in self.subjects if s.id not in skip), key=lambda s: s.id)


def _segments(raw, sid: str) -> list[tuple[float, float, str]]:
    segs = []
    for item in raw or []:
        if len(item) != 3:
            raise ManifestError(f"{sid}: activity segments are [start_s, end_s, label]")
        s, e, lab = float(item[0]), float(item[1]), str(item[2])
        if e <= s:
            raise ManifestError(f"{sid}: activity segment {lab!r} ends before it starts")
        segs.append((s, e, lab))
    segs.sort()
    for (s0, e0, l0), (s1, e1, l1) in zip(segs, segs[1:]):
        if s1 < e0:
            raise ManifestError(f"{sid}: activity segments {l0!r} and {l1!r} overlap")
    return segs


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON ({e})") from None
    version = doc.get("version")
    if version not in MANIFEST_VERSIONS:
        raise ManifestError(f"{path}: unrecognized manifest version {version!r}")
    root = path.parent
    subjects = []
    for entry in doc.get("subjects", []):
        sid = str(entry["id"])
        sig = root / entry["signals"]
        if not sig.exists():
            raise FileNotFoundError(f"{sid}: signal file not found: {sig}")
        truth = root / entry["truth"] if entry.get("truth") else None
        if truth is not None and not truth.exists():
            raise FileNotFoundError(f"{sid}: truth file not found: {truth}")
        subjects.append(SubjectEntry(sid, sig, _segments(entry.get("activities"), sid), truth, entry.get("fs")))
    ids = [s.id for s in subjects]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{path}: duplicate subject ids")
    return Manifest(version, subjects, [str(x) for x in doc.get("exclude", [])], root)


def assemble_windows(manifest: Manifest, include_raw: bool = False,
                     drop_flagged: bool = False) -> tuple[WindowBatch, ExtractReport]:
    """Extract every non-excluded subject, ordered by subject id then window start."""
    parts, report = [], ExtractReport()
    for subj in manifest.active():
        sig = load_signal(subj.signals)
        if subj.fs is not None and abs(float(subj.fs) - sig.fs) > 1e-9:
            raise ManifestError(f"{subj.id}: manifest says fs={subj.fs} but {subj.signals} has fs={sig.fs}")
        missing = [c for c in ("ecg",) + ACCEL_CHANNELS if c not in sig.channels]
        if missing:
            raise ManifestError(f"{subj.signals}: missing channels {missing}")
        ecg = sig.select(["ecg"])
        accel = sig.select(ACCEL_CHANNELS)
        resp = sig.select(["resp"]) if "resp" in sig.channels else None
        peaks = None
        if subj.truth is not None:
            truth = json.loads(subj.truth.read_text())
            if "breath_peak_times_s" in truth:
                peaks = np.asarray(truth["breath_peak_times_s"], dtype=np.float64) - sig.t0
        batch, rep = extract_subject(ecg, accel, resp, peaks, subj.activities, subj.id,
                                     include_raw=include_raw, drop_flagged=drop_flagged)
        parts.append(batch)
        report.merge(rep)
    return WindowBatch.concat(parts), report


def field_study_manifest(root: str | Path, out: str | Path, fs: float = 700.0, exclude=("S6",)) -> Path:
    """Optional converter for the public chest-worn field-study recordings
    (per-subject pickles with ``signal.chest.{ECG,ACC,Resp}`` and an activity
    label stream). Writes binary signals and a manifest next to ``out``."""
    import pickle

    from .signal_core import SampledSignal, save_signal

    root, out = Path(root), Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    subjects = []
    for pkl in sorted(root.glob("S*/S*.pkl")):
        sid = pkl.stem
        with open(pkl, "rb") as fh:
            d = pickle.load(fh, encoding="latin1")
        chest = d["signal"]["chest"]
        x = np.vstack([np.ravel(chest["ECG"]), np.asarray(chest["ACC"]).T, np.ravel(chest["Resp"])])
        sig_name = f"{sid}.bin"
        save_signal(SampledSignal(x, fs, ("ecg",) + ACCEL_CHANNELS + ("resp",)), out.parent / sig_name)
        acts = []
        labels = np.ravel(d.get("activity", []))
        if labels.size:
            lab_fs = labels.size / (x.shape[1] / fs)
            change = np.flatnonzero(np.diff(labels)) + 1
            bounds = np.concatenate(([0], change, [labels.size]))
            for a, b in zip(bounds[:-1], bounds[1:]):
                acts.append([a / lab_fs, b / lab_fs, str(int(labels[a]))])
        subjects.append({"id": sid, "signals": sig_name, "activities": acts, "fs": fs})
    out.write_text(json.dumps({"version": MANIFEST_VERSIONS[0], "subjects": subjects,
                               "exclude": list(exclude)}, indent=2))
    return out
