"""JSON run configuration with dotted ``key=value`` overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, fields
from pathlib import Path

from .airway import ConfigError
from .dataset import DatasetConfig
from .models import ModelConfig
from .train import TrainConfig

# desk-scale training defaults; the library defaults keep lr 1e-4 and 32 chunks per batch
TOY_TRAIN = {"lr": 2e-3, "batch_chunks": 8}


def default_config() -> dict:
    model = ModelConfig().to_dict()
    return {
        "dataset": asdict(DatasetConfig()),
        "model": model,
        "train": {**asdict(TrainConfig()), **TOY_TRAIN},
        "grid": {
            "heads": ["Static", "Recurrent", "ConvRecurrent", "Temporal3D"],
            "losses": ["mse-mse", "mse-de", "mse-ce"],
            "schemes": ["personalized"],
        },
    }


def _merge(base: dict, update: dict, path: str = "") -> None:
    for key, value in update.items():
        full = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {full!r}")
        if isinstance(base[key], dict) and not isinstance(value, dict):
            raise ConfigError(f"config key {full!r} must be an object")
        if isinstance(base[key], dict):
            _merge(base[key], value, full + ".")
        else:
            base[key] = value


def parse_override(text: str) -> tuple:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_override(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def load_config(path=None, overrides=(), seed: int | None = None) -> dict:
    """Defaults, then the JSON file, then overrides, then ``seed`` for every seeded section."""
    cfg = default_config()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        data.pop("args", None)
        _merge(cfg, data)
    for text in overrides:
        apply_override(cfg, *parse_override(text))
    if seed is not None:
        cfg["dataset"]["seed"] = cfg["train"]["seed"] = cfg["model"]["seed"] = int(seed)
    validate_config(cfg)
    return cfg


def _build(cls, data: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return cls(**copy.deepcopy(data))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} config: {exc}") from exc


def dataset_config(cfg: dict) -> DatasetConfig:
    return _build(DatasetConfig, cfg["dataset"], "dataset")


def model_config(cfg: dict) -> ModelConfig:
    return _build(ModelConfig, cfg["model"], "model")


def train_config(cfg: dict) -> TrainConfig:
    return _build(TrainConfig, cfg["train"], "train")


def validate_config(cfg: dict) -> None:
    dataset_config(cfg).validate()
    model_config(cfg).validate()
    train_config(cfg).validate()


def write_effective(out_dir, cfg: dict, args: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "effective_config.json"
    path.write_text(json.dumps({**cfg, "args": args or {}}, indent=1, sort_keys=True) + "\n")
    return path
