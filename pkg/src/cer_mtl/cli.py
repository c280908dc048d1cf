"""``cer-mtl`` command line: synth, train, eval, gradcheck, sweep.

Exit codes: 0 success, 1 verification failure, 2 input error (JSON on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .config import ConfigError, RunConfig, load_run_config
from .data import (
    DataError,
    FramedDataset,
    FramingConfig,
    ManifestEntry,
    NormStats,
    load_recordings,
    synthetic_recordings,
    write_features_csv,
    write_labels_csv,
    write_manifest,
)
from .data.synthetic import DIFFICULTIES
from .losses import TASKS, TraceSet, ccc, pcc, sliding_ccc
from .model import CheckpointError, count_parameters, load_checkpoint, save_checkpoint
from .training import NonFiniteError, epoch_log_csv, evaluate, fit, run_sweep, timing_csv

EXIT_OK, EXIT_VERIFY, EXIT_INPUT = 0, 1, 2
log = logging.getLogger("cer_mtl")


class InputError(Exception):
    def __init__(self, message: str, path=None):
        super().__init__(message)
        self.path = None if path is None else str(path)


def _seed(value):
    if value is not None:
        return value
    return int(os.environ.get("CER_SEED", "0"))


def _csv_list(text: str | None) -> list[str] | None:
    return None if text is None else [v.strip() for v in text.split(",") if v.strip()]


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- synth ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = _out_dir(args.out)
    recs = synthetic_recordings(_seed(args.seed), args.recordings, args.frames, args.difficulty)
    entries = []
    for rec in recs:
        paths = {}
        for m, track in rec.features.items():
            paths[m] = f"{rec.id}_{m}.csv"
            write_features_csv(out / paths[m], track)
        write_labels_csv(out / f"{rec.id}_labels.csv", rec.labels)
        entries.append(ManifestEntry(rec.id, rec.speaker_ids, paths, f"{rec.id}_labels.csv", rec.frame_rate_hz))
    write_manifest(out / "manifest.json", entries)
    print(f"wrote {len(entries)} recordings to {out / 'manifest.json'}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------------


def _overrides(args) -> dict:
    tasks = _csv_list(getattr(args, "task", None))
    weights = _csv_list(getattr(args, "weights", None))
    return {
        "run": {"seed": args.seed},
        "model": {
            "mode": getattr(args, "mode", None),
            "tasks": tasks,
            "window_columns": getattr(args, "window", None),
        },
        "train": {
            "loss": getattr(args, "loss", None),
            "learning_rate": args.lr,
            "max_epochs": args.epochs,
            "patience_epochs": args.patience,
            "batch_size": args.batch_size,
            "mtl_weights": None if weights is None else [float(w) for w in weights],
        },
        "data": {
            "modalities": _csv_list(args.modalities),
            "center_stride_frames": args.center_stride,
            "test_fold": args.test_fold,
            "folds": args.folds,
        },
    }


def _resolve(args) -> RunConfig:
    over = _overrides(args)
    if getattr(args, "mode", None) == "stl" and not over["model"]["tasks"]:
        raise InputError("--mode stl needs --task")
    if getattr(args, "mode", None) == "mtl" and not over["model"]["tasks"]:
        over["model"]["tasks"] = list(TASKS)
    cfg = load_run_config(args.config, over)
    cfg.manifest = str(args.data)
    cfg.out_dir = str(args.out)
    return cfg


def _recordings(cfg: RunConfig):
    return load_recordings(cfg.manifest, list(cfg.data.modalities))


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args.out)
    cfg.save(out / "config.toml")  # resolved config goes down before any work
    recs = _recordings(cfg)
    result, _ = fit(recs, cfg.model, cfg.train, cfg.data)
    tasks = result.network.config.tasks
    (out / "epoch_log.csv").write_text(epoch_log_csv(result.log, tasks))
    (out / "timing.csv").write_text(timing_csv(result.log))
    save_checkpoint(result.checkpoint, out / "best.ckpt")
    (out / "parameters.json").write_text(json.dumps(count_parameters(result.network).to_json(), indent=2) + "\n")
    ck = result.checkpoint
    print(f"best epoch {ck.epoch} of {result.epochs_run}: val_J={ck.val_loss:.6f} "
          + " ".join(f"{t}={ck.meta['val_ccc'][t]:.4f}" for t in tasks))
    return EXIT_OK


# -- eval -------------------------------------------------------------------------------


def _checkpoint_dataset(ck, manifest, split: str, center_stride: int | None) -> FramedDataset:
    data = ck.meta.get("data")
    roles = ck.meta.get("roles")
    if data is None or roles is None or "norm.mean" not in ck.buffers:
        raise InputError("checkpoint carries no data split or normaliser; was it written by train?")
    if split not in roles:
        raise InputError(f"split must be one of {sorted(roles)}")
    if not roles[split]:
        raise InputError(f"split {split!r} is empty")
    recs = {r.id: r for r in load_recordings(manifest, data["modalities"])}
    missing = [i for i in roles[split] if i not in recs]
    if missing:
        raise InputError(f"manifest lacks recordings {missing}", manifest)
    stats = NormStats(ck.buffers["norm.mean"], ck.buffers["norm.scale"])
    if stats.mean.size != ck.config.input_dim:
        raise InputError(f"checkpoint expects {ck.config.input_dim} input features, normaliser has {stats.mean.size}")
    dim = sum(recs[roles[split][0]].features[m].dim for m in data["modalities"])
    if dim != ck.config.input_dim:
        raise InputError(f"data has {dim} fused features but checkpoint expects {ck.config.input_dim}", manifest)
    return FramedDataset(
        [recs[i] for i in roles[split]],
        data["modalities"],
        FramingConfig(ck.config.window, data["stride"]),
        stats,
        ck.config.tasks,
        center_stride or data["center_stride"],
    )


def _read_predictions(path, tasks) -> dict[tuple[str, int], dict[str, float]]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}", path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "recording" not in cols or "frame" not in cols:
            raise InputError("predictions need 'recording' and 'frame' columns", path)
        have = [t for t in tasks if t in cols]
        if not have:
            raise InputError(f"predictions have none of the task columns {list(tasks)}", path)
        try:
            return {(r["recording"], int(r["frame"])): {t: float(r[t]) for t in have} for r in reader}
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad predictions row: {exc}", path) from None


def _traces(args):
    """Per recording: (frames, {task: prediction}, {task: reference})."""
    if args.checkpoint:
        ck = load_checkpoint(args.checkpoint)
        ds = _checkpoint_dataset(ck, args.data, args.split, args.center_stride)
        ev = evaluate(ck.network(), ds, ck.meta.get("train", {}).get("loss", "ccc"))
        out = {}
        for i, rid in enumerate(ds.recording_ids):
            sel = ds.owner == i
            out[rid] = (ds.centers[sel], {t: ev.predictions[t][sel] for t in ds.tasks},
                        {t: ev.references[t][sel] for t in ds.tasks})
        return out, ds.tasks
    preds = _read_predictions(args.predictions, TASKS)
    tasks = tuple(t for t in TASKS if t in next(iter(preds.values()), {}))
    recs = {r.id: r for r in load_recordings(args.data, [])}
    out = {}
    for rid in sorted({k[0] for k in preds}):
        if rid not in recs:
            raise InputError(f"recording {rid!r} not in manifest", args.data)
        frames = np.array(sorted(f for r, f in preds if r == rid))
        if frames.min() < 0 or frames.max() >= len(recs[rid]):
            raise InputError(f"recording {rid!r}: frame index out of range", args.predictions)
        out[rid] = (frames, {t: np.array([preds[(rid, f)][t] for f in frames]) for t in tasks},
                    {t: recs[rid].labels.values[t][frames] for t in tasks})
    return out, tasks


def _metric(fn, p, r) -> float:
    try:
        return fn(p, r)
    except ValueError:
        return float("nan")


def cmd_eval(args) -> int:
    if bool(args.checkpoint) == bool(args.predictions):
        raise InputError("give exactly one of --checkpoint or --predictions")
    traces, tasks = _traces(args)
    out = _out_dir(args.out)
    pred_all = {t: np.concatenate([tr[1][t] for tr in traces.values()]) for t in tasks}
    ref_all = {t: np.concatenate([tr[2][t] for tr in traces.values()]) for t in tasks}

    with (out / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "ccc", "pcc", "n"])
        for t in tasks:
            w.writerow([t, _fmt(_metric(ccc, pred_all[t], ref_all[t])),
                        _fmt(_metric(pcc, pred_all[t], ref_all[t])), pred_all[t].size])

    with (out / "predictions.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording", "frame", *tasks, *(f"ref_{t}" for t in tasks)])
        for rid, (frames, p, r) in traces.items():
            for j, f in enumerate(frames):
                w.writerow([rid, int(f), *(repr(float(p[t][j])) for t in tasks),
                            *(repr(float(r[t][j])) for t in tasks)])

    with (out / "sliding_ccc.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording", "index", "frame", *tasks])
        for rid, (frames, p, r) in traces.items():
            if frames.size < args.window:
                log.warning("recording %s has %d predictions, fewer than window %d; no sliding trace",
                            rid, frames.size, args.window)
                continue
            s = sliding_ccc(TraceSet(r, p, tasks=tasks), args.window)
            for i in range(frames.size - args.window + 1):
                # frame column is the last prediction the window covers
                w.writerow([rid, i, int(frames[i + args.window - 1]), *(_fmt(s[t][i]) for t in tasks)])

    for t in tasks:
        print(f"{t}: ccc={_metric(ccc, pred_all[t], ref_all[t]):.6f} pcc={_metric(pcc, pred_all[t], ref_all[t]):.6f}")
    return EXIT_OK


# -- gradcheck -------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    try:
        sizes = gc.Sizes.parse(args.sizes) if args.sizes else gc.Sizes()
    except ValueError as exc:
        raise InputError(str(exc)) from None
    results = gc.run_gradcheck(_seed(args.seed), sizes, args.points)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {r.max_error:.3e}  {'ok' if r.passed else 'FAIL'}")
    failing = [r.name for r in results if not r.passed]
    if failing:
        print(f"failing components (tolerance {gc.TOLERANCE:g}): {', '.join(failing)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# -- sweep --------------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args.out)
    cfg.save(out / "config.toml")
    seeds = [int(s) for s in _csv_list(args.seeds)] if args.seeds else [cfg.seed]
    values = _csv_list(args.values)
    if args.axis == "window":
        values = [int(v) for v in values]
    modalities = {"speech", "body"} if args.axis in ("loss", "modality") else cfg.data.modalities
    recs = load_recordings(cfg.manifest, sorted(modalities))
    table = run_sweep(args.axis, values, recs, cfg.model, cfg.train, cfg.data, seeds)
    (out / f"sweep_{args.axis}.csv").write_text(table.to_csv())
    (out / f"sweep_{args.axis}.md").write_text(table.to_markdown())
    print(table.to_markdown(), end="")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML run config; flags override its values")
    p.add_argument("--data", type=Path, required=True, help="manifest.json")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--loss", choices=("ccc", "pcc", "mse"))
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--modalities", help="comma list, e.g. speech,body")
    p.add_argument("--center-stride", type=int, help="frames between training examples")
    p.add_argument("--folds", type=int, help="speaker-exclusive folds (>= 3)")
    p.add_argument("--test-fold", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cer-mtl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int, default=6000)
    p.add_argument("--difficulty", choices=sorted(DIFFICULTIES), default="medium")
    p.add_argument("--recordings", type=int, default=10)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train one network")
    _add_train_flags(p)
    p.add_argument("--mode", choices=("mtl", "stl"))
    p.add_argument("--task", help="task(s) to train, comma list")
    p.add_argument("--window", type=int, help="temporal extent N in columns")
    p.add_argument("--weights", help="objective weights, comma list")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or a predictions file")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--predictions", type=Path)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test", help="train, val or test (checkpoint mode)")
    p.add_argument("--center-stride", type=int)
    p.add_argument("--window", type=int, default=100, help="sliding CCC window, in predictions")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and loss")
    p.add_argument("--seed", type=int)
    p.add_argument("--sizes", help="P,N,F,H[,B] for the checked layers")
    p.add_argument("--points", type=int, default=5)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("sweep", help="tabulate held-out CCC along one axis")
    _add_train_flags(p)
    p.add_argument("--axis", choices=("loss", "mode", "modality", "window"), required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--seeds", help="comma list; median over seeds is reported")
    p.set_defaults(fn=cmd_sweep)
    return parser


def _error(kind: str, message: str, path=None) -> int:
    payload = {"error": kind, "message": message}
    if path is not None:
        payload["path"] = str(path)
    print(json.dumps(payload), file=sys.stderr)
    return EXIT_INPUT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except InputError as exc:
        return _error("input", str(exc), exc.path)
    except FileNotFoundError as exc:
        return _error("missing_file", str(exc), exc.filename or _path_in(str(exc)))
    except (DataError, ConfigError, CheckpointError) as exc:
        return _error(type(exc).__name__, str(exc), getattr(exc, "path", None))
    except NonFiniteError as exc:
        print(json.dumps({"error": "non_finite", "message": str(exc), "parameter": exc.parameter}), file=sys.stderr)
        return EXIT_VERIFY
    except ValueError as exc:
        return _error("invalid", str(exc))


def _path_in(message: str):
    prefix = "no such file: "
    return message[len(prefix):] if message.startswith(prefix) else None


if __name__ == "__main__":
    sys.exit(main())
