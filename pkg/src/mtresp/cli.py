"""``mtresp`` command line: synth, extract, train, infer, eval, bland-altman, bench.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("mtresp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _synth_configs(doc):
    from .synth import SynthConfig, default_subjects

    if isinstance(doc, list):
        return [SynthConfig.from_dict(d) for d in doc]
    if "subjects" in doc:
        return [SynthConfig.from_dict(d) for d in doc["subjects"]]
    doc = dict(doc)
    n = int(doc.pop("n_subjects", 3))
    duration = float(doc.pop("duration_s", 128.0))
    seed = int(doc.pop("seed", 0))
    return default_subjects(n, duration, seed, **doc)


def cmd_synth(a):
    from .synth import write_subjects

    doc = json.loads(Path(a.config).read_text()) if a.config else {}
    path = write_subjects(_synth_configs(doc), a.out, a.format)
    print(path)


def cmd_extract(a):
    from .dataset import write_windows
    from .ingest import assemble_windows, load_manifest
    from .pipeline import reference_rows, write_rr_csv

    batch, rep = assemble_windows(load_manifest(a.manifest), include_raw=a.raw, drop_flagged=a.drop_flagged)
    write_windows(batch, a.out, rep.as_dict())
    if a.ref:
        write_rr_csv(reference_rows(batch), a.ref)
    print(json.dumps(rep.as_dict()))


def _load_model(path):
    from .models import model_from_spec
    from .nn.checkpoint import load_into, read_header

    header = read_header(path)
    model = model_from_spec(header["layers"])
    load_into(path, model)
    return model, header


def cmd_train(a):
    from .dataset import read_windows
    from .evaluation import mae
    from .models import TOY, Widths, build_conf, get_conf
    from .nn.checkpoint import save_checkpoint
    from .training import TrainConfig, predict, split_dataset, train

    data = read_windows(a.windows)
    conf = get_conf(a.conf)
    cfg = TrainConfig(conf.id, a.epochs, a.batch, a.split_ratio, a.seed, a.lr_policy, a.w_wave, a.w_rr,
                      a.checkpoint_every, a.checkpoint_dir)
    groups = [m.get(a.split_by) for m in data.meta] if a.split_by != "window" else None
    tr, te = split_dataset(len(data), cfg.split_ratio, a.split_seed if a.split_seed is not None else a.seed, groups)
    model = build_conf(conf, a.seed, TOY if a.toy else Widths())
    train_set, test_set = data.subset(tr), data.subset(te)
    model, hist = train(model, train_set, cfg, val=test_set if a.validate else None)
    if a.history:
        hist.to_csv(a.history)
    meta = {
        "conf": conf.id, "seed": a.seed, "epochs": a.epochs, "batch": a.batch, "lr_policy": cfg.lr_policy,
        "split": {"ratio": cfg.split_ratio, "seed": a.split_seed if a.split_seed is not None else a.seed,
                  "by": a.split_by, "test_ids": test_set.window_ids()},
        "final_loss": hist.loss_total[-1],
    }
    if conf.rr_head and len(test_set):
        _, rr = predict(model, test_set)
        meta["test_avg_mae"] = mae(rr, test_set.rr_targets)
    save_checkpoint(a.out, model, meta)
    print(json.dumps({k: v for k, v in meta.items() if k != "split"}))


def cmd_infer(a):
    from .dataset import read_windows
    from .pipeline import prediction_rows, write_rr_csv

    model, header = _load_model(a.model)
    data = read_windows(a.windows)
    if a.subset == "test":
        ids = (header.get("split") or {}).get("test_ids")
        if ids is None:
            raise ValueError(f"{a.model}: checkpoint records no test split; use --subset all")
        pos = {w: i for i, w in enumerate(data.window_ids())}
        data = data.subset([pos[w] for w in ids if w in pos])
    write_rr_csv(prediction_rows(model, data), a.out)
    print(a.out)


def cmd_eval(a):
    from .evaluation import write_json
    from .pipeline import compute_metrics, read_rr_csv

    metrics = compute_metrics(read_rr_csv(a.pred), read_rr_csv(a.ref), a.group)
    write_json(a.out, metrics)
    print(json.dumps(metrics.get("avg_rr", {})))


def cmd_bland_altman(a):
    from .evaluation import bland_altman
    from .pipeline import read_rr_csv

    pred, ref = read_rr_csv(a.pred), read_rr_csv(a.ref)
    ref_by_id = {r.window_id: r.avg_rr for r in ref}
    pairs = [(p.avg_rr, ref_by_id[p.window_id]) for p in pred if p.window_id in ref_by_id]
    pairs = np.array([(p, r) for p, r in pairs if np.isfinite(p) and np.isfinite(r)]).reshape(-1, 2)
    stats = bland_altman(pairs[:, 0], pairs[:, 1])
    stats.scatter_csv(a.out)
    print(json.dumps(stats.as_dict()))


def cmd_bench(a):
    from .evaluation import bench_inference
    from .models import CONFS, build_conf

    rng = np.random.default_rng(a.seed)
    targets = []
    if a.model:
        targets.append(_load_model(a.model)[0])
    else:
        for cid in (sorted(CONFS) if a.conf == "all" else [a.conf.upper()]):
            targets.append(build_conf(cid, a.seed))
    reports = []
    for m in targets:
        x = rng.standard_normal((a.batch, m.widths.in_channels, m.conf.input_len))
        r = bench_inference(m, x, a.repeats, a.warmup).as_dict()
        r["conf"] = m.conf.id
        reports.append(r)
        print(json.dumps(r), flush=True)
    if a.out:
        Path(a.out).write_text(json.dumps(reports if len(reports) > 1 else reports[0], indent=2))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtresp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("synth", help="generate synthetic subjects and a manifest")
    s.add_argument("--config", help="JSON: list of SynthConfig dicts, or {n_subjects, duration_s, seed, ...}")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("bin", "csv"), default="bin")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract", help="manifest -> windows.bin")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--raw", action="store_true", help="also store raw inputs for CONF-A/B")
    s.add_argument("--drop-flagged", action="store_true", help="exclude windows with a degenerate channel")
    s.add_argument("--ref", help="also write the reference RR table here")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", help="train one configuration")
    s.add_argument("--conf", required=True, choices=list("ABCDEabcde"))
    s.add_argument("--windows", required=True)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--batch", type=int, default=128)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split-ratio", type=float, default=0.8)
    s.add_argument("--split-seed", type=int)
    s.add_argument("--split-by", choices=("window", "subject"), default="window")
    s.add_argument("--lr-policy", choices=("adaptive", "fixed"))
    s.add_argument("--w-wave", type=float, default=1.0)
    s.add_argument("--w-rr", type=float, default=1.0)
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.add_argument("--checkpoint-dir")
    s.add_argument("--history", help="write per-epoch history CSV")
    s.add_argument("--validate", action="store_true", help="record held-out MAE every epoch")
    s.add_argument("--toy", action="store_true", help="narrow widths, for smoke tests")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="checkpoint + windows -> pred.csv")
    s.add_argument("--model", required=True)
    s.add_argument("--windows", required=True)
    s.add_argument("--subset", choices=("test", "all"), default="all")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="pred.csv + ref.csv -> metrics.json")
    s.add_argument("--pred", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--group", choices=("activity", "subject"))
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bland-altman", help="agreement statistics and scatter CSV")
    s.add_argument("--pred", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bland_altman)

    s = sub.add_parser("bench", help="inference latency and parameter count")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--model")
    g.add_argument("--conf", default="E", help="A-E or 'all' (randomly initialized)")
    s.add_argument("--batch", type=int, default=128)
    s.add_argument("--repeats", type=int, default=100)
    s.add_argument("--warmup", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    from .nn.checkpoint import CheckpointError
    from .signal_core import SignalError
    from .synth import SynthConfigError
    from .training import NumericError

    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        a.func(a)
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SignalError, CheckpointError, SynthConfigError, FileNotFoundError, ValueError, KeyError,
            json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
