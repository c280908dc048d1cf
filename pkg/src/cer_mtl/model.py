"""CER-MTL / CER-STL network assembly, parameter accounting and checkpoints.

Network: a shared trunk (1-D convolution over time with the fused features as
input channels, then max-pooling) feeds one branch per task, each made of a
GRU over the pooled sequence, a tanh dense layer and a linear output unit.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .layers import (
    Conv1dLayer,
    Conv1dSpec,
    DenseLayer,
    DenseSpec,
    GruLayer,
    GruSpec,
    conv1d_forward,
    dense_forward,
    gru_forward,
    init_parameters,
    maxpool1d,
)
from .losses import TASKS
from .tensor import ShapeError, Tensor

TASK_KEYS = {"activation": "act", "valence": "val", "dominance": "dom"}


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 63
    window: int = 20
    conv_filters: int = 25
    conv_kernel: int = 3
    pool_size: int = 2
    gru_hidden: int = 5
    fc_width: int = 2
    tasks: tuple[str, ...] = TASKS
    mode: str = "mtl"

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.mode not in ("mtl", "stl"):
            raise ValueError(f"mode must be 'mtl' or 'stl', got {self.mode!r}")
        if self.mode == "stl" and len(self.tasks) != 1:
            raise ValueError("an STL model has exactly one task")
        if not self.tasks or len(set(self.tasks)) != len(self.tasks):
            raise ValueError("tasks must be non-empty and unique")
        unknown = [t for t in self.tasks if t not in TASK_KEYS]
        if unknown:
            raise ValueError(f"unknown tasks {unknown}")
        dims = (self.input_dim, self.window, self.conv_filters, self.conv_kernel,
                self.pool_size, self.gru_hidden, self.fc_width)
        if min(dims) < 1:
            raise ValueError("all model dimensions must be positive")
        if self.conv_out_length < self.pool_size:
            raise ValueError(
                f"window {self.window} too short for kernel {self.conv_kernel} and pool {self.pool_size}"
            )

    @property
    def conv_out_length(self) -> int:
        return self.window - self.conv_kernel + 1

    @property
    def pooled_length(self) -> int:
        return self.conv_out_length // self.pool_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = list(self.tasks)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**{**d, "tasks": tuple(d["tasks"])})


@dataclass
class TaskBranch:
    gru: GruLayer
    fc: DenseLayer
    head: DenseLayer


class CerNetwork:
    """Parameters plus the forward pass for one configuration."""

    def __init__(self, config: ModelConfig, conv: Conv1dLayer, branches: dict[str, TaskBranch]):
        self.config = config
        self.conv = conv
        self.branches = branches

    @property
    def params(self) -> dict[str, Tensor]:
        """Ordered parameter set; names are ``trunk.conv.*`` and ``task.<key>.{gru,fc,head}.*``."""
        out = {f"trunk.conv.{k}": v for k, v in self.conv.parameters().items()}
        for task in self.config.tasks:
            key = TASK_KEYS[task]
            b = self.branches[task]
            for part in ("gru", "fc", "head"):
                for k, v in getattr(b, part).parameters().items():
                    out[f"task.{key}.{part}.{k}"] = v
        return out

    def trunk(self, x: Tensor) -> Tensor:
        return maxpool1d(conv1d_forward(self.conv, x), self.config.pool_size)

    def forward(self, x) -> dict[str, Tensor]:
        """Per-task predictions for one image ``(P, N)`` (scalars) or a batch ``(B, P, N)``."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        if x.ndim not in (2, 3) or x.shape[-2:] != (cfg.input_dim, cfg.window):
            raise ShapeError(f"expected input (..., {cfg.input_dim}, {cfg.window}), got {x.shape}")
        single = x.ndim == 2
        if single:
            x = x.reshape((1,) + x.shape)
        shared = self.trunk(x)
        out = {}
        for task in cfg.tasks:
            b = self.branches[task]
            h = gru_forward(b.gru, shared)
            y = dense_forward(b.head, dense_forward(b.fc, h))
            out[task] = y.reshape(()) if single else y.reshape((y.shape[0],))
        return out

    __call__ = forward

    def predict(self, x: np.ndarray, chunk: int = 1024) -> dict[str, np.ndarray]:
        """Tape-free batched inference."""
        with detached(self):
            parts: dict[str, list[np.ndarray]] = {t: [] for t in self.config.tasks}
            for lo in range(0, len(x), chunk):
                for t, y in self.forward(Tensor(x[lo : lo + chunk])).items():
                    parts[t].append(y.data)
        return {t: np.concatenate(v) for t, v in parts.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.params
        if set(state) != set(params):
            raise ValueError("state names do not match the network's parameters")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ShapeError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)


class detached:
    """Context manager that takes parameters off the tape for inference."""

    def __init__(self, net: CerNetwork):
        self.params = list(net.params.values())

    def __enter__(self):
        self.flags = [p.requires_grad for p in self.params]
        for p in self.params:
            p.requires_grad = False

    def __exit__(self, *exc):
        for p, f in zip(self.params, self.flags):
            p.requires_grad = f


def build_model(config: ModelConfig, seed) -> CerNetwork:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    conv = init_parameters(Conv1dSpec(config.input_dim, config.conv_filters, config.conv_kernel), rng)
    branches = {}
    for task in config.tasks:
        branches[task] = TaskBranch(
            gru=init_parameters(GruSpec(config.conv_filters, config.gru_hidden), rng),
            fc=init_parameters(DenseSpec(config.gru_hidden, config.fc_width, "tanh"), rng),
            head=init_parameters(DenseSpec(config.fc_width, 1, "identity"), rng),
        )
    return CerNetwork(config, conv, branches)


@dataclass
class ParameterCount:
    total: int
    per_parameter: dict[str, int]

    @property
    def per_layer(self) -> dict[str, int]:
        layers: dict[str, int] = {}
        for name, n in self.per_parameter.items():
            layer = name.rsplit(".", 1)[0]
            layers[layer] = layers.get(layer, 0) + n
        return layers

    def to_json(self) -> dict:
        return {"total": self.total, "per_layer": self.per_layer, "per_parameter": self.per_parameter}


def count_parameters(params) -> ParameterCount:
    if isinstance(params, CerNetwork):
        params = params.params
    elif hasattr(params, "parameters"):
        params = params.parameters()
    per = {k: int(v.size) for k, v in params.items()}
    return ParameterCount(sum(per.values()), per)


# -- checkpoints ---------------------------------------------------------------

MAGIC = b"CERCKPT\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")  # magic, version, header length
_DIGEST = 32


class CheckpointError(ValueError):
    """Checkpoint file is truncated, corrupted or not a checkpoint at all."""


class CheckpointVersionError(CheckpointError):
    pass


class ConfigMismatchError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    epoch: int = 0
    val_loss: float = float("nan")
    rng_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def network(self) -> CerNetwork:
        net = build_model(self.config, 0)
        net.load_state(self.params)
        return net


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Binary container: prefix, JSON header, raw little-endian float64 arrays, SHA-256."""
    arrays = [("param", k, v) for k, v in ckpt.params.items()]
    arrays += [("buffer", k, v) for k, v in ckpt.buffers.items()]
    index, blobs, offset = [], [], 0
    for kind, name, arr in arrays:
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append({"kind": kind, "name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {
            "config": ckpt.config.to_dict(),
            "epoch": ckpt.epoch,
            "val_loss": ckpt.val_loss,
            "rng_state": ckpt.rng_state,
            "meta": ckpt.meta,
            "arrays": index,
        },
        sort_keys=True,
    ).encode()
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(blobs)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size + _DIGEST:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    header = json.loads(body[_PREFIX.size : _PREFIX.size + hlen])
    data = body[_PREFIX.size + hlen :]
    params, buffers = {}, {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=entry["offset"]).reshape(entry["shape"])
        (params if entry["kind"] == "param" else buffers)[entry["name"]] = arr.astype(np.float64)
    config = ModelConfig.from_dict(header["config"])
    if expect_config is not None and config != expect_config:
        raise ConfigMismatchError(
            f"checkpoint was saved for {config.mode.upper()} {config.tasks}, not for"
            f" {expect_config.mode.upper()} {expect_config.tasks}"
        )
    return Checkpoint(
        config, params, header["epoch"], header["val_loss"], header["rng_state"], header["meta"], buffers
    )
