"""Run configuration: model + training + data settings, persisted as TOML."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import ModelConfig
from .training import DataConfig, TrainConfig

# TOML key -> dataclass field, per section; keys carry their units
MODEL_KEYS = {
    "window_columns": "window",
    "conv_filters": "conv_filters",
    "conv_kernel_columns": "conv_kernel",
    "pool_size_columns": "pool_size",
    "gru_hidden_units": "gru_hidden",
    "fc_width_units": "fc_width",
    "tasks": "tasks",
    "mode": "mode",
}
TRAIN_KEYS = {
    "learning_rate": "learning_rate",
    "batch_size": "batch_size",
    "max_epochs": "max_epochs",
    "patience_epochs": "patience",
    "loss": "loss",
    "mtl_weights": "mtl_weights",
}
DATA_KEYS = {
    "modalities": "modalities",
    "stride_frames": "stride",
    "center_stride_frames": "center_stride",
    "folds": "folds",
    "test_fold": "test_fold",
    "split_seed": "split_seed",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    manifest: str = ""
    out_dir: str = ""
    seed: int = 0

    def to_toml(self) -> str:
        def section(obj, keys):
            out = {}
            for key, attr in keys.items():
                v = getattr(obj, attr)
                if v is None:
                    continue
                out[key] = list(v) if isinstance(v, tuple) else v
            return out

        doc = {
            "run": {"seed": self.seed, "manifest": self.manifest, "out_dir": self.out_dir},
            "model": section(self.model, MODEL_KEYS),
            "train": section(self.train, TRAIN_KEYS),
            "data": section(self.data, DATA_KEYS),
        }
        return tomli_w.dumps(doc)

    def save(self, path) -> None:
        Path(path).write_text(self.to_toml())


def _apply(obj, keys: Mapping[str, str], values: Mapping[str, Any], section: str):
    unknown = set(values) - set(keys)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    updates = {}
    for key, v in values.items():
        attr = keys[key]
        updates[attr] = tuple(v) if isinstance(v, list) else v
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def load_run_config(path=None, overrides: Mapping[str, Mapping[str, Any]] | None = None) -> RunConfig:
    """Defaults < config file < ``overrides`` (``{section: {key: value}}``, TOML key names).

    The seed falls back to the ``CER_SEED`` environment variable when neither
    the file nor the overrides set it.
    """
    doc: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"no such file: {p}")
        try:
            doc = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    for section, values in (overrides or {}).items():
        doc.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})
    unknown = set(doc) - {"run", "model", "train", "data"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")

    run = dict(doc.get("run", {}))
    seed = run.pop("seed", None)
    if seed is None:
        seed = int(os.environ.get("CER_SEED", "0"))
    cfg = RunConfig(seed=int(seed), manifest=run.pop("manifest", ""), out_dir=run.pop("out_dir", ""))
    if run:
        raise ConfigError(f"unknown keys in [run]: {sorted(run)}")
    cfg.model = _apply(cfg.model, MODEL_KEYS, doc.get("model", {}), "model")
    cfg.train = _apply(cfg.train, TRAIN_KEYS, doc.get("train", {}), "train")
    cfg.train = replace(cfg.train, seed=cfg.seed)
    cfg.data = _apply(cfg.data, DATA_KEYS, doc.get("data", {}), "data")
    return cfg
