"""Feature/label tracks, deltas, framing into feature images, fusion and normalisation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..losses import TASKS

SPEECH_DIM = 39
BODY_DIM = 24
MODALITY_DIMS = {"speech": SPEECH_DIM, "body": BODY_DIM}


class DataError(ValueError):
    """Input data violates a structural requirement."""


@dataclass
class FeatureTrack:
    modality: str
    frame_rate_hz: float
    vectors: np.ndarray  # (T, dim)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise DataError(f"{self.modality} vectors must be (frames, dim), got {self.vectors.shape}")
        if not self.frame_rate_hz > 0:
            raise DataError("frame rate must be positive")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass
class LabelTrack:
    values: dict[str, np.ndarray]
    annotator_count: int = 1
    frame_rate_hz: float = 60.0

    def __post_init__(self):
        lengths = set()
        for task, v in self.values.items():
            arr = np.asarray(v, dtype=np.float64)
            if arr.ndim != 1:
                raise DataError(f"label track for {task} must be one-dimensional")
            if not np.isfinite(arr).all():
                raise DataError(f"label track for {task} has non-finite values")
            self.values[task] = arr
            lengths.add(arr.size)
        if len(lengths) > 1:
            raise DataError(f"label tasks have different lengths: {sorted(lengths)}")

    @property
    def tasks(self) -> tuple[str, ...]:
        return tuple(t for t in TASKS if t in self.values) + tuple(
            t for t in self.values if t not in TASKS
        )

    @property
    def frame_period_s(self) -> float:
        return 1.0 / self.frame_rate_hz

    def __len__(self) -> int:
        return len(next(iter(self.values.values()))) if self.values else 0


def _central_difference(v: np.ndarray) -> np.ndarray:
    padded = np.concatenate([v[:1], v, v[-1:]], axis=0)
    return (padded[2:] - padded[:-2]) / 2.0


def compute_deltas(track: FeatureTrack, order: int = 1) -> FeatureTrack:
    """Central-difference deltas with replicated edges; ``order=2`` applies it twice."""
    if order not in (1, 2):
        raise ValueError("delta order must be 1 or 2")
    if len(track) < 3:
        raise DataError("delta computation needs at least 3 frames")
    out = track.vectors
    for _ in range(order):
        out = _central_difference(out)
    return FeatureTrack(track.modality, track.frame_rate_hz, out)


def with_deltas(track: FeatureTrack) -> FeatureTrack:
    """Append first and second deltas to the static features."""
    d1 = compute_deltas(track, 1).vectors
    d2 = compute_deltas(track, 2).vectors
    return FeatureTrack(track.modality, track.frame_rate_hz, np.hstack([track.vectors, d1, d2]))


@dataclass(frozen=True)
class FramingConfig:
    N: int = 20  # columns per image
    t: int = 10  # stride in frames
    P: int | None = None

    def __post_init__(self):
        if self.N < 2 or self.N % 2:
            raise ValueError(f"N must be a positive even number, got {self.N}")
        if self.t < 1:
            raise ValueError("stride t must be >= 1")

    @property
    def offsets(self) -> np.ndarray:
        half = self.N // 2
        return np.arange(-half + 1, half + 1) * self.t

    @property
    def extent_frames(self) -> int:
        return self.N * self.t


@dataclass
class FeatureImage:
    matrix: np.ndarray  # (P, N)
    center: int
    rows: tuple[str, ...] = field(default=())

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def frame_indices(T: int, config: FramingConfig, centers) -> np.ndarray:
    """Frame index per (center, column); out-of-range offsets clamp to the track edges."""
    centers = np.asarray(centers)
    return np.clip(centers[..., None] + config.offsets, 0, T - 1)


def frame_features(vectors, config: FramingConfig, l: int) -> FeatureImage:
    if isinstance(vectors, FeatureTrack):
        rows = (vectors.modality,)
        vectors = vectors.vectors
    else:
        rows = ()
        vectors = np.asarray(vectors, dtype=np.float64)
    T = vectors.shape[0]
    if T == 0:
        raise DataError("cannot frame an empty track")
    if not 0 <= l < T:
        raise DataError(f"center frame {l} outside track of length {T}")
    if config.P is not None and vectors.shape[1] != config.P:
        raise DataError(f"track dim {vectors.shape[1]} != configured P={config.P}")
    idx = frame_indices(T, config, l)
    return FeatureImage(vectors[idx].T.copy(), int(l), rows)


def fuse_modalities(*images: FeatureImage) -> FeatureImage:
    """Stack modality images row-wise (first argument's rows first)."""
    if not images:
        raise DataError("nothing to fuse")
    first = images[0]
    for img in images[1:]:
        if img.matrix.shape[1] != first.matrix.shape[1]:
            raise DataError("cannot fuse images with different N")
        if img.center != first.center:
            raise DataError("cannot fuse images centred on different frames")
    rows = tuple(r for img in images for r in img.rows)
    return FeatureImage(np.vstack([img.matrix for img in images]), first.center, rows)


def unfuse(image: FeatureImage, dims: Sequence[int]) -> list[FeatureImage]:
    if sum(dims) != image.matrix.shape[0]:
        raise DataError(f"dims {list(dims)} do not add up to {image.matrix.shape[0]} rows")
    bounds = np.cumsum([0, *dims])
    return [
        FeatureImage(image.matrix[lo:hi].copy(), image.center)
        for lo, hi in zip(bounds[:-1], bounds[1:])
    ]


@dataclass
class NormStats:
    mean: np.ndarray
    scale: np.ndarray  # std, with zero-variance dims set to 1


def fit_normalizer(tracks: Sequence[FeatureTrack | np.ndarray]) -> NormStats:
    """Per-dimension statistics pooled over the given (training) tracks."""
    mats = [t.vectors if isinstance(t, FeatureTrack) else np.asarray(t) for t in tracks]
    pooled = np.vstack(mats)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    return NormStats(mean, scale)


def normalize(stats: NormStats, track):
    if isinstance(track, FeatureTrack):
        return FeatureTrack(track.modality, track.frame_rate_hz, normalize(stats, track.vectors))
    return (np.asarray(track, dtype=np.float64) - stats.mean) / stats.scale


def denormalize(stats: NormStats, track):
    if isinstance(track, FeatureTrack):
        return FeatureTrack(track.modality, track.frame_rate_hz, denormalize(stats, track.vectors))
    return np.asarray(track, dtype=np.float64) * stats.scale + stats.mean


def average_annotators(
    raw: Mapping[str, Sequence[Sequence[float]] | np.ndarray], frame_rate_hz: float = 60.0
) -> LabelTrack:
    """Frame-wise mean over annotators; ``raw[task]`` is (annotators, frames)."""
    values, counts = {}, set()
    for task, tracks in raw.items():
        rows = [np.asarray(r, dtype=np.float64) for r in tracks]
        if not rows:
            raise DataError(f"no annotations for {task}")
        if len({r.size for r in rows}) != 1:
            raise DataError(f"annotator tracks for {task} have different lengths")
        values[task] = np.mean(np.vstack(rows), axis=0)
        counts.add(len(rows))
    return LabelTrack(values, annotator_count=max(counts), frame_rate_hz=frame_rate_hz)
