"""Speaker-exclusive cross-validation folds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .features import DataError


@dataclass(frozen=True)
class SessionSplit:
    folds: tuple[tuple[str, ...], ...]
    speakers: tuple[frozenset[str], ...]

    def __len__(self) -> int:
        return len(self.folds)

    def fold_of(self, recording_id: str) -> int:
        for i, fold in enumerate(self.folds):
            if recording_id in fold:
                return i
        raise KeyError(recording_id)

    def roles(self, test_fold: int, val_fold: int | None = None) -> dict[str, list[str]]:
        """Recording ids for train / val / test; validation defaults to the next fold."""
        k = len(self.folds)
        if val_fold is None:
            val_fold = (test_fold + 1) % k
        if k < 3 or val_fold == test_fold:
            raise DataError("need at least three folds and distinct test/validation folds")
        train = [r for i, f in enumerate(self.folds) if i not in (test_fold, val_fold) for r in f]
        return {"train": train, "val": list(self.folds[val_fold]), "test": list(self.folds[test_fold])}


def _speaker_groups(speakers: Mapping[str, Iterable[str]]) -> list[list[str]]:
    parent: dict[str, str] = {}

    def find(a: str) -> str:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for rec, spk in speakers.items():
        node = f"rec:{rec}"
        parent.setdefault(node, node)
        for s in spk:
            other = f"spk:{s}"
            parent.setdefault(other, other)
            ra, rb = find(node), find(other)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[str, list[str]] = {}
    for rec in speakers:
        groups.setdefault(find(f"rec:{rec}"), []).append(rec)
    return [sorted(g) for g in groups.values()]


def split_sessions(
    speakers: Mapping[str, Iterable[str]],
    k: int,
    durations: Mapping[str, float] | None = None,
    seed: int = 0,
) -> SessionSplit:
    """Assign recordings to ``k`` folds so that no speaker appears in two folds.

    Recordings sharing a speaker are merged (union-find) and whole groups are
    placed greedily, longest first, onto the currently lightest fold.
    """
    speakers = {rec: tuple(s) for rec, s in speakers.items()}
    if k < 1:
        raise ValueError("k must be positive")
    groups = _speaker_groups(speakers)
    if len(groups) < k:
        raise DataError(f"only {len(groups)} speaker-disjoint groups, cannot form {k} folds")
    dur = {rec: float(durations[rec]) if durations else 1.0 for rec in speakers}
    if any(d <= 0 for d in dur.values()):
        raise DataError("recording durations must be positive")

    rng = np.random.default_rng(seed)
    ties = rng.permutation(len(groups))
    order = sorted(range(len(groups)), key=lambda i: (-sum(dur[r] for r in groups[i]), ties[i]))
    loads = [0.0] * k
    members: list[list[str]] = [[] for _ in range(k)]
    for gi in order:
        target = min(range(k), key=lambda f: (loads[f], f))
        members[target].extend(groups[gi])
        loads[target] += sum(dur[r] for r in groups[gi])
    folds = tuple(tuple(sorted(m)) for m in members)
    spk = tuple(frozenset(s for r in f for s in speakers[r]) for f in folds)
    return SessionSplit(folds, spk)
