"""CSV feature/label files and the recording manifest.

Feature CSV: header ``frame,<name_0>,...,<name_{P-1}>``, one row per frame,
frame indices consecutive from 0.

Label CSV, wide form: ``frame,activation,valence,dominance`` (any subset of the
task columns).  Long form: ``frame,task,annotator,value``; annotators are
averaged per frame.

Manifest: JSON list of ``{id, speaker_ids, feature_paths: {modality: path},
label_path, frame_rate_hz}``; relative paths resolve against the manifest's
directory.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..losses import TASKS
from .features import MODALITY_DIMS, DataError, FeatureTrack, LabelTrack, average_annotators


class ParseError(DataError):
    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


class MalformedHeaderError(ParseError):
    pass


class RaggedRowError(ParseError):
    pass


class NonFiniteValueError(ParseError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))  # shortest round-tripping representation


def _read_rows(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedHeaderError(path, 1, "empty file") from None
        rows = [(i, row) for i, row in enumerate(reader, start=2) if row]
    return path, [h.strip() for h in header], rows


def _parse_float(path, line: int, text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, line, f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise NonFiniteValueError(path, line, f"non-finite value {text!r}")
    return v


def _check_frames(path, frames: list[tuple[int, int]]) -> None:
    for expected, (line, frame) in enumerate(frames):
        if frame != expected:
            raise ParseError(path, line, f"frame index {frame}, expected {expected}")


def load_features_csv(
    path, modality: str | None = None, frame_rate_hz: float = 60.0, expected_dim: int | None = None
) -> FeatureTrack:
    path, header, rows = _read_rows(path)
    if len(header) < 2 or header[0] != "frame":
        raise MalformedHeaderError(path, 1, "header must be 'frame,<feature names...>'")
    width = len(header)
    if expected_dim is None and modality in MODALITY_DIMS:
        expected_dim = MODALITY_DIMS[modality]
    if expected_dim is not None and width - 1 != expected_dim:
        raise MalformedHeaderError(path, 1, f"{width - 1} feature columns, expected {expected_dim}")
    data = np.empty((len(rows), width - 1))
    frames = []
    for r, (line, row) in enumerate(rows):
        if len(row) != width:
            raise RaggedRowError(path, line, f"row has {len(row) - 1} values, expected {width - 1}")
        try:
            frames.append((line, int(row[0])))
        except ValueError:
            raise ParseError(path, line, f"bad frame index {row[0]!r}") from None
        data[r] = [_parse_float(path, line, v) for v in row[1:]]
    _check_frames(path, frames)
    return FeatureTrack(modality or path.stem, frame_rate_hz, data)


def write_features_csv(path, track: FeatureTrack, names: Sequence[str] | None = None) -> None:
    names = list(names) if names else [f"{track.modality}_{i}" for i in range(track.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", *names])
        for i, row in enumerate(track.vectors):
            w.writerow([i, *map(_fmt, row)])


def load_labels_csv(path, frame_rate_hz: float = 60.0) -> LabelTrack:
    path, header, rows = _read_rows(path)
    if header == ["frame", "task", "annotator", "value"]:
        return _load_long_labels(path, rows, frame_rate_hz)
    if len(header) < 2 or header[0] != "frame" or not set(header[1:]) <= set(TASKS):
        raise MalformedHeaderError(
            path, 1, "header must be 'frame,<tasks...>' or 'frame,task,annotator,value'"
        )
    width = len(header)
    cols: list[list[float]] = [[] for _ in header[1:]]
    frames = []
    for line, row in rows:
        if len(row) != width:
            raise RaggedRowError(path, line, f"row has {len(row) - 1} values, expected {width - 1}")
        frames.append((line, int(row[0])))
        for c, v in zip(cols, row[1:]):
            c.append(_parse_float(path, line, v))
    _check_frames(path, frames)
    return LabelTrack({t: np.array(c) for t, c in zip(header[1:], cols)}, 1, frame_rate_hz)


def _load_long_labels(path, rows, frame_rate_hz: float) -> LabelTrack:
    table: dict[str, dict[str, dict[int, float]]] = {}
    for line, row in rows:
        if len(row) != 4:
            raise RaggedRowError(path, line, f"long-form row needs 4 fields, got {len(row)}")
        frame, task, annotator, value = row
        if task not in TASKS:
            raise ParseError(path, line, f"unknown task {task!r}")
        series = table.setdefault(task, {}).setdefault(annotator, {})
        series[int(frame)] = _parse_float(path, line, value)
    raw = {}
    for task, annotators in table.items():
        tracks = []
        for name, series in sorted(annotators.items()):
            if sorted(series) != list(range(len(series))):
                raise ParseError(path, None, f"annotator {name} ({task}) frames not consecutive from 0")
            tracks.append([series[i] for i in range(len(series))])
        raw[task] = tracks
    try:
        return average_annotators(raw, frame_rate_hz)
    except DataError as exc:
        raise ParseError(path, None, str(exc)) from None


def write_labels_csv(path, labels: LabelTrack) -> None:
    tasks = labels.tasks
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", *tasks])
        for i in range(len(labels)):
            w.writerow([i, *(_fmt(labels.values[t][i]) for t in tasks)])


@dataclass
class ManifestEntry:
    id: str
    speaker_ids: tuple[str, ...]
    feature_paths: dict[str, str]
    label_path: str
    frame_rate_hz: float

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "speaker_ids": list(self.speaker_ids),
            "feature_paths": dict(self.feature_paths),
            "label_path": self.label_path,
            "frame_rate_hz": self.frame_rate_hz,
        }


@dataclass
class Recording:
    id: str
    speaker_ids: tuple[str, ...]
    features: dict[str, FeatureTrack]
    labels: LabelTrack
    frame_rate_hz: float = 60.0

    def __len__(self) -> int:
        return len(self.labels)


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(raw, list):
        raise ParseError(path, None, "manifest must be a JSON list")
    entries = []
    for item in raw:
        try:
            entries.append(
                ManifestEntry(
                    id=str(item["id"]),
                    speaker_ids=tuple(str(s) for s in item["speaker_ids"]),
                    feature_paths={str(k): str(v) for k, v in item["feature_paths"].items()},
                    label_path=str(item["label_path"]),
                    frame_rate_hz=float(item["frame_rate_hz"]),
                )
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise ParseError(path, None, f"bad manifest entry {item!r}: {exc}") from None
    if len({e.id for e in entries}) != len(entries):
        raise ParseError(path, None, "duplicate recording ids")
    return entries


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    Path(path).write_text(json.dumps([e.to_json() for e in entries], indent=2) + "\n")


def load_recordings(manifest_path, modalities: Sequence[str] | None = None) -> list[Recording]:
    """Load every recording of a manifest; features and labels must share one frame rate."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    out = []
    for e in load_manifest(manifest_path):
        wanted = modalities or list(e.feature_paths)
        missing = [m for m in wanted if m not in e.feature_paths]
        if missing:
            raise DataError(f"recording {e.id} lacks modalities {missing}")
        feats = {
            m: load_features_csv(base / e.feature_paths[m], m, e.frame_rate_hz) for m in wanted
        }
        labels = load_labels_csv(base / e.label_path, e.frame_rate_hz)
        for m, tr in feats.items():
            if len(tr) != len(labels):
                raise DataError(
                    f"recording {e.id}: {m} has {len(tr)} frames but labels have {len(labels)}"
                )
        out.append(Recording(e.id, e.speaker_ids, feats, labels, e.frame_rate_hz))
    return out


def relpath(path, start) -> str:
    return os.path.relpath(path, start).replace(os.sep, "/")
