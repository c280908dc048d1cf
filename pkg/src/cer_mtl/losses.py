"""Correlation metrics, differentiable regression losses and the multi-task objective.

All moments are population moments (divisor ``n``).  The losses treat the whole
batch as one population, so a correlation loss needs at least two samples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor

logger = logging.getLogger(__name__)

TASKS = ("activation", "valence", "dominance")
LOSS_KINDS = ("ccc", "pcc", "mse")


class UndefinedCorrelationError(ValueError):
    """Correlation is undefined because a variance (or the CCC denominator) is zero."""


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ShapeError(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < 2:
        raise ShapeError("correlation needs at least two samples")
    return x, y


def pcc(x, y) -> float:
    x, y = _pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    vx, vy = np.mean(dx * dx), np.mean(dy * dy)
    if vx <= 0.0 or vy <= 0.0:
        raise UndefinedCorrelationError("pcc undefined for a zero-variance series")
    return float(np.mean(dx * dy) / math.sqrt(vx * vy))


def ccc(x, y) -> float:
    x, y = _pair(x, y)
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    denom = np.mean(dx * dx) + np.mean(dy * dy) + (mx - my) ** 2
    if denom <= 0.0:
        raise UndefinedCorrelationError("ccc undefined: both series constant with equal means")
    return float(2.0 * np.mean(dx * dy) / denom)


def _loss_operands(pred, ref) -> tuple[Tensor, np.ndarray]:
    pred = as_tensor(pred)
    ref = np.asarray(ref.data if isinstance(ref, Tensor) else ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction shape {pred.shape} != reference shape {ref.shape}")
    return pred, ref


def ccc_loss(pred, ref) -> Tensor:
    """``1 - CCC(pred, ref)`` as a scalar tensor differentiable in ``pred``."""
    pred, ref = _loss_operands(pred, ref)
    if pred.size < 2:
        raise ShapeError("ccc loss needs a batch of at least two samples")
    mu_r = ref.mean()
    dr = ref - mu_r
    var_r = float(np.mean(dr * dr))
    if var_r <= 0.0:
        raise UndefinedCorrelationError("ccc loss: reference batch has zero variance")
    mu_p = pred.mean()
    dp = pred - mu_p
    var_p = (dp * dp).mean()
    cov = (dp * dr).mean()
    shift = mu_p - mu_r
    return 1.0 - 2.0 * cov / (var_p + var_r + shift * shift)


def pcc_loss(pred, ref) -> Tensor:
    pred, ref = _loss_operands(pred, ref)
    if pred.size < 2:
        raise ShapeError("pcc loss needs a batch of at least two samples")
    dr = ref - ref.mean()
    var_r = float(np.mean(dr * dr))
    if var_r <= 0.0:
        raise UndefinedCorrelationError("pcc loss: reference batch has zero variance")
    dp = pred - pred.mean()
    var_p = (dp * dp).mean()
    if var_p.item() <= 0.0:
        raise UndefinedCorrelationError("pcc loss: prediction batch has zero variance")
    cov = (dp * dr).mean()
    return 1.0 - cov / (var_p * var_r).sqrt()


def mse_loss(pred, ref) -> Tensor:
    pred, ref = _loss_operands(pred, ref)
    if pred.size < 1:
        raise ShapeError("mse loss needs at least one sample")
    return (pred - ref).square().mean()


_LOSSES = {"ccc": ccc_loss, "pcc": pcc_loss, "mse": mse_loss}


def task_loss(kind: str, pred, ref) -> Tensor:
    """Training-time loss: a degenerate correlation batch falls back to MSE with a warning."""
    if kind not in _LOSSES:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    try:
        return _LOSSES[kind](pred, ref)
    except UndefinedCorrelationError as exc:
        logger.warning("%s; using mse for this batch", exc)
        return mse_loss(pred, ref)


def metric_loss(kind: str, pred, ref) -> float:
    """Plain-float value of a loss on full arrays (used for validation)."""
    if kind == "ccc":
        return 1.0 - ccc(pred, ref)
    if kind == "pcc":
        return 1.0 - pcc(pred, ref)
    if kind == "mse":
        p, r = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
        return float(np.mean((p - r) ** 2))
    raise ValueError(f"unknown loss kind {kind!r}")


def uniform_weights(m: int) -> tuple[float, ...]:
    if m < 1:
        raise ValueError("need at least one task")
    return (1.0 / m,) * m


def mtl_objective(losses: Sequence[Tensor], weights: Sequence[float] | None = None) -> Tensor:
    """Weighted sum of per-task losses; uniform weights when none are given."""
    if weights is None:
        weights = uniform_weights(len(losses))
    if len(losses) != len(weights) or not losses:
        raise ValueError(f"{len(losses)} losses but {len(weights)} weights")
    if not all(math.isfinite(w) for w in weights):
        raise ValueError("objective weights must be finite")
    total = None
    for w, loss in zip(weights, losses):
        term = float(w) * as_tensor(loss)
        total = term if total is None else total + term
    return total


@dataclass
class MtlObjective:
    tasks: tuple[str, ...] = TASKS
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("need at least one task")
        if self.weights is None:
            self.weights = uniform_weights(len(self.tasks))
        if len(self.weights) != len(self.tasks):
            raise ValueError("one weight per task required")

    def __call__(self, losses: Mapping[str, Tensor]) -> Tensor:
        return mtl_objective([losses[t] for t in self.tasks], self.weights)


@dataclass
class TraceSet:
    """Aligned reference / prediction series per task."""

    references: dict[str, np.ndarray]
    predictions: dict[str, np.ndarray]
    frame_period_s: float = 1.0 / 60.0
    tasks: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.tasks:
            self.tasks = tuple(t for t in TASKS if t in self.references) or tuple(self.references)
        for t in self.tasks:
            r = np.asarray(self.references[t], dtype=np.float64)
            p = np.asarray(self.predictions[t], dtype=np.float64)
            if r.shape != p.shape or r.ndim != 1:
                raise ShapeError(f"task {t}: reference and prediction must be equal-length series")
            self.references[t], self.predictions[t] = r, p

    def __len__(self) -> int:
        return len(self.references[self.tasks[0]])


def sliding_ccc(trace: TraceSet, window: int) -> dict[str, np.ndarray]:
    """Trailing-window CCC per task.

    Entry ``i`` covers samples ``[i, i + window)``, i.e. the window ending at
    index ``l = i + window - 1``.  Windows with a zero denominator are NaN.
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    T = len(trace)
    if window > T:
        raise ValueError(f"window {window} longer than trace ({T})")
    out = {}
    for task in trace.tasks:
        ref, pred = trace.references[task], trace.predictions[task]
        vals = np.empty(T - window + 1)
        for i in range(T - window + 1):
            try:
                vals[i] = ccc(pred[i : i + window], ref[i : i + window])
            except UndefinedCorrelationError:
                vals[i] = np.nan
        out[task] = vals
    return out
