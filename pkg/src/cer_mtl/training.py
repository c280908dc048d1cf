"""Adam, the early-stopped training loop, evaluation and experiment sweeps."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import DataBundle, FramedDataset, FramingConfig, Recording, fit_fused_normalizer, split_sessions
from .losses import LOSS_KINDS, TASKS, ccc, metric_loss, mtl_objective, pcc, task_loss, uniform_weights
from .model import Checkpoint, CerNetwork, ModelConfig, build_model
from .tensor import Tensor, backward, zero_grad

logger = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    def __init__(self, message: str, parameter: str | None = None):
        super().__init__(message)
        self.parameter = parameter


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 20
    loss: str = "ccc"
    mtl_weights: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if self.batch_size < 2 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size >= 2, max_epochs >= 1 and patience >= 1 required")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.mtl_weights is not None:
            object.__setattr__(self, "mtl_weights", tuple(float(w) for w in self.mtl_weights))


# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    state: AdamState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update.  Inputs are not modified; new arrays are returned."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}", name)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, replace(state, m=new_m, v=new_v, step=t)


# -- early stopping ----------------------------------------------------------------


class EarlyStopping:
    """Tracks the best (lowest) validation value; stops after ``patience`` non-improving epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record one epoch; True when ``value`` is a new best."""
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


# -- evaluation ----------------------------------------------------------------------


@dataclass
class Evaluation:
    objective: float
    losses: dict[str, float]
    ccc: dict[str, float]
    pcc: dict[str, float]
    predictions: dict[str, np.ndarray]
    references: dict[str, np.ndarray]


def _safe(metric, p, r) -> float:
    try:
        return metric(p, r)
    except ValueError:
        return float("nan")


def evaluate(
    net: CerNetwork, data: FramedDataset, loss: str = "ccc", weights: Sequence[float] | None = None
) -> Evaluation:
    """Whole-set metrics; correlation losses treat the full set as one population."""
    preds = net.predict(data.images())
    refs = data.targets()
    tasks = net.config.tasks
    losses = {t: _safe(lambda p, r: metric_loss(loss, p, r), preds[t], refs[t]) for t in tasks}
    weights = weights or uniform_weights(len(tasks))
    objective = float(sum(w * losses[t] for w, t in zip(weights, tasks)))
    return Evaluation(
        objective,
        losses,
        {t: _safe(ccc, preds[t], refs[t]) for t in tasks},
        {t: _safe(pcc, preds[t], refs[t]) for t in tasks},
        preds,
        {t: refs[t] for t in tasks},
    )


# -- training loop ----------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_J: float
    val_J: float
    val_ccc: dict[str, float]
    wall_time_s: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[EpochRecord]
    network: CerNetwork

    @property
    def epochs_run(self) -> int:
        return len(self.log)


def epoch_log_csv(log: Sequence[EpochRecord], tasks: Sequence[str]) -> str:
    """Deterministic epoch log; wall time is kept out so identical runs give identical bytes."""
    lines = [",".join(["epoch", "train_J", "val_J", *(f"val_ccc_{t}" for t in tasks)])]
    for r in log:
        lines.append(
            ",".join([str(r.epoch), repr(r.train_J), repr(r.val_J), *(repr(r.val_ccc[t]) for t in tasks)])
        )
    return "\n".join(lines) + "\n"


def timing_csv(log: Sequence[EpochRecord]) -> str:
    return "epoch,wall_time_s\n" + "".join(f"{r.epoch},{r.wall_time_s:.3f}\n" for r in log)


def train(
    net: CerNetwork,
    data: DataBundle,
    config: TrainConfig,
    validate: Callable[[CerNetwork], Evaluation] | None = None,
    meta: Mapping | None = None,
) -> TrainResult:
    """Minibatch Adam on the weighted multi-task objective with early stopping.

    ``validate`` defaults to :func:`evaluate` on ``data.val``; the returned
    checkpoint holds the parameters of the epoch with the lowest validation
    objective.
    """
    tasks = net.config.tasks
    weights = config.mtl_weights or uniform_weights(len(tasks))
    if len(weights) != len(tasks):
        raise ValueError(f"{len(weights)} objective weights for {len(tasks)} tasks")
    if validate is None:
        def validate(n):
            return evaluate(n, data.val, config.loss, weights)

    rng = np.random.default_rng(config.seed)
    params = net.params
    state = AdamState()
    stopper = EarlyStopping(config.patience)
    log: list[EpochRecord] = []
    best: Checkpoint | None = None
    n = len(data.train)
    if n < 2:
        raise ValueError("training set needs at least two examples")
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        batch_J = []
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            if idx.size < 2:
                continue  # a single-sample tail cannot carry batch statistics
            x = Tensor(data.train.images(idx))
            y = data.train.targets(idx)
            out = net(x)
            J = mtl_objective([task_loss(config.loss, out[t], y[t]) for t in tasks], weights)
            if not math.isfinite(J.item()):
                raise NonFiniteError(f"non-finite training objective in epoch {epoch}")
            zero_grad(params)
            backward(J)
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
            new, state = adam_step(state, {k: p.data for k, p in params.items()}, grads, config.learning_rate)
            for k, p in params.items():
                p.data = new[k]
            batch_J.append(J.item())
        zero_grad(params)
        ev = validate(net)
        record = EpochRecord(epoch, float(np.mean(batch_J)), ev.objective, dict(ev.ccc), time.perf_counter() - t0)
        log.append(record)
        logger.info("epoch %d train_J=%.5f val_J=%.5f", epoch, record.train_J, record.val_J)
        if stopper.update(epoch, ev.objective) or best is None:
            best = Checkpoint(
                net.config,
                net.state(),
                epoch,
                ev.objective,
                rng_state=_jsonable(rng.bit_generator.state),
                meta={**(meta or {}), "train": _train_meta(config), "val_ccc": dict(ev.ccc)},
            )
        if stopper.should_stop:
            break
    net.load_state(best.params)
    return TrainResult(best, log, net)


def _train_meta(config: TrainConfig) -> dict:
    d = asdict(config)
    if d["mtl_weights"] is not None:
        d["mtl_weights"] = list(d["mtl_weights"])
    return d


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


# -- data preparation -----------------------------------------------------------------------


@dataclass(frozen=True)
class DataConfig:
    modalities: tuple[str, ...] = ("speech", "body")
    stride: int = 10
    center_stride: int = 10
    folds: int = 5
    test_fold: int = 0
    split_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        if not self.modalities:
            raise ValueError("need at least one modality")


def prepare_data(
    recordings: Sequence[Recording], data_cfg: DataConfig, window: int, tasks: Sequence[str]
) -> tuple[DataBundle, dict]:
    """Speaker-exclusive train/val/test bundle plus the metadata needed to rebuild it."""
    split = split_sessions(
        {r.id: r.speaker_ids for r in recordings},
        data_cfg.folds,
        {r.id: float(len(r)) for r in recordings},
        seed=data_cfg.split_seed,
    )
    roles = split.roles(data_cfg.test_fold)
    by_id = {r.id: r for r in recordings}
    train_recs = [by_id[i] for i in roles["train"]]
    stats = fit_fused_normalizer(train_recs, data_cfg.modalities)
    framing = FramingConfig(window, data_cfg.stride)

    def make(ids):
        return FramedDataset([by_id[i] for i in ids], data_cfg.modalities, framing, stats, tasks,
                             data_cfg.center_stride)

    bundle = DataBundle(make(roles["train"]), make(roles["val"]), make(roles["test"]), stats)
    meta = {"data": {**asdict(data_cfg), "modalities": list(data_cfg.modalities)}, "roles": roles}
    return bundle, meta


def input_dim(recordings: Sequence[Recording], modalities: Sequence[str]) -> int:
    return sum(recordings[0].features[m].dim for m in modalities)


def fit(
    recordings: Sequence[Recording],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    data_cfg: DataConfig,
) -> tuple[TrainResult, DataBundle]:
    """Prepare data, build a seeded network and train it; normalisation stats ride in the checkpoint."""
    model_cfg = replace(model_cfg, input_dim=input_dim(recordings, data_cfg.modalities))
    bundle, meta = prepare_data(recordings, data_cfg, model_cfg.window, model_cfg.tasks)
    net = build_model(model_cfg, train_cfg.seed)
    result = train(net, bundle, train_cfg, meta=meta)
    result.checkpoint.buffers = {"norm.mean": bundle.stats.mean, "norm.scale": bundle.stats.scale}
    return result, bundle


# -- sweeps ------------------------------------------------------------------------------------

SWEEP_AXES = ("loss", "mode", "modality", "window")
MODALITY_SETS = {"multimodal": ("speech", "body"), "speech": ("speech",), "body": ("body",)}


@dataclass
class SweepTable:
    axis: str
    row_label: str
    rows: list[str]
    columns: list[tuple[str, str]]  # (group, task)
    values: dict[tuple[str, str, str], float]  # (row, group, task) -> CCC
    seeds: tuple[int, ...] = (0,)

    def to_csv(self) -> str:
        head = [self.row_label] + [f"{g}_{t}" if g else t for g, t in self.columns]
        lines = [",".join(head)]
        for r in self.rows:
            lines.append(",".join([r] + [repr(self.values[(r, g, t)]) for g, t in self.columns]))
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        head = [self.row_label] + [f"{g} {t}".strip() for g, t in self.columns]
        body = [[r] + [f"{self.values[(r, g, t)]:.3f}" for g, t in self.columns] for r in self.rows]
        widths = [max(len(str(c)) for c in col) for col in zip(head, *body)]

        def line(cells):
            return "| " + " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)) + " |"

        sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        return "\n".join([line(head), sep, *(line(b) for b in body)]) + "\n"


def _held_out_ccc(result: TrainResult, bundle: DataBundle, loss: str) -> dict[str, float]:
    return evaluate(result.network, bundle.test, loss).ccc


def _run_one(recordings, model_cfg, train_cfg, data_cfg) -> dict[str, float]:
    result, bundle = fit(recordings, model_cfg, train_cfg, data_cfg)
    return _held_out_ccc(result, bundle, train_cfg.loss)


def _median_over_seeds(fn, seeds) -> dict[str, float]:
    runs = [fn(s) for s in seeds]
    return {t: float(np.median([r[t] for r in runs])) for t in runs[0]}


def run_sweep(
    axis: str,
    values: Sequence,
    recordings: Sequence[Recording],
    model_cfg: ModelConfig | None = None,
    train_cfg: TrainConfig | None = None,
    data_cfg: DataConfig | None = None,
    seeds: Sequence[int] = (0,),
) -> SweepTable:
    """Train one model per value (per seed) and tabulate median held-out CCC per task.

    * ``loss``: columns loss x task, rows multimodal / speech / body.
    * ``mode``: rows MTL / STL; STL trains one single-task network per task.
    * ``modality``: rows are modality sets.
    * ``window``: rows are temporal extents N.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    data_cfg = data_cfg or DataConfig()
    tasks = [t for t in TASKS if t in model_cfg.tasks]
    seeds = tuple(seeds)
    values = [str(v).lower() for v in values]

    def go(mc, tc, dc):
        return _median_over_seeds(lambda s: _run_one(recordings, mc, replace(tc, seed=s), dc), seeds)

    cells: dict[tuple[str, str, str], float] = {}
    if axis == "loss":
        bad = [v for v in values if v not in LOSS_KINDS]
        if bad:
            raise ValueError(f"unknown losses {bad}")
        rows = list(MODALITY_SETS)
        for row in rows:
            dc = replace(data_cfg, modalities=MODALITY_SETS[row])
            for v in values:
                res = go(model_cfg, replace(train_cfg, loss=v), dc)
                cells.update({(row, v.upper(), t): res[t] for t in tasks})
        columns = [(v.upper(), t) for v in values for t in tasks]
        return SweepTable(axis, "model", rows, columns, cells, seeds)

    rows = []
    for v in values:
        if axis == "mode":
            if v not in ("mtl", "stl"):
                raise ValueError(f"unknown mode {v!r}")
            if v == "mtl":
                res = go(replace(model_cfg, mode="mtl", tasks=tuple(tasks)), train_cfg, data_cfg)
            else:
                res = {}
                for t in tasks:
                    single = go(replace(model_cfg, mode="stl", tasks=(t,)), replace(train_cfg, mtl_weights=None), data_cfg)
                    res[t] = single[t]
            row = v.upper()
        elif axis == "modality":
            if v not in MODALITY_SETS:
                raise ValueError(f"unknown modality set {v!r}")
            res = go(model_cfg, train_cfg, replace(data_cfg, modalities=MODALITY_SETS[v]))
            row = v
        else:
            res = go(replace(model_cfg, window=int(v)), train_cfg, data_cfg)
            row = str(int(v))
        rows.append(row)
        cells.update({(row, "", t): res[t] for t in tasks})
    label = {"mode": "model", "modality": "model", "window": "N"}[axis]
    return SweepTable(axis, label, rows, [("", t) for t in tasks], cells, seeds)
