"""Framed, fused and normalised training examples drawn from a set of recordings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import DataError, FramingConfig, NormStats, fit_normalizer, normalize
from .io import Recording


def fused_matrix(rec: Recording, modalities: Sequence[str]) -> np.ndarray:
    """Early fusion: per-frame concatenation of the modality vectors in the given order."""
    try:
        return np.hstack([rec.features[m].vectors for m in modalities])
    except KeyError as exc:
        raise DataError(f"recording {rec.id} has no {exc.args[0]} features") from None


def fit_fused_normalizer(recordings: Sequence[Recording], modalities: Sequence[str]) -> NormStats:
    return fit_normalizer([fused_matrix(r, modalities) for r in recordings])


class FramedDataset:
    """Feature images centred every ``center_stride`` frames across several recordings."""

    def __init__(
        self,
        recordings: Sequence[Recording],
        modalities: Sequence[str],
        framing: FramingConfig,
        stats: NormStats,
        tasks: Sequence[str],
        center_stride: int = 1,
    ):
        if not recordings:
            raise DataError("dataset needs at least one recording")
        if center_stride < 1:
            raise ValueError("center_stride must be >= 1")
        self.framing = framing
        self.tasks = tuple(tasks)
        self.modalities = tuple(modalities)
        self.recording_ids = tuple(r.id for r in recordings)
        mats, labels, starts, lengths, centers, owners = [], [], [], [], [], []
        offset = 0
        for i, rec in enumerate(recordings):
            m = normalize(stats, fused_matrix(rec, modalities))
            missing = [t for t in self.tasks if t not in rec.labels.values]
            if missing:
                raise DataError(f"recording {rec.id} has no labels for {missing}")
            mats.append(m)
            labels.append(np.column_stack([rec.labels.values[t] for t in self.tasks]))
            c = np.arange(0, len(m), center_stride)
            centers.append(c)
            owners.append(np.full(c.size, i))
            starts.append(np.full(c.size, offset))
            lengths.append(np.full(c.size, len(m)))
            offset += len(m)
        self.features = np.vstack(mats)
        self.labels = np.vstack(labels)
        self.centers = np.concatenate(centers)
        self.owner = np.concatenate(owners)
        self._start = np.concatenate(starts)
        self._length = np.concatenate(lengths)
        self.input_dim = self.features.shape[1]

    def __len__(self) -> int:
        return self.centers.size

    def images(self, idx=None) -> np.ndarray:
        """(B, P, N) feature images for the selected examples."""
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        local = np.clip(
            self.centers[idx, None] + self.framing.offsets, 0, self._length[idx, None] - 1
        )
        return self.features[self._start[idx, None] + local].transpose(0, 2, 1)

    def targets(self, idx=None) -> dict[str, np.ndarray]:
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        rows = self._start[idx] + self.centers[idx]
        return {t: self.labels[rows, j] for j, t in enumerate(self.tasks)}


@dataclass
class DataBundle:
    train: FramedDataset
    val: FramedDataset
    test: FramedDataset | None
    stats: NormStats
