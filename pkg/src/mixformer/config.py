"""JSON configuration files. Unknown keys are rejected rather than ignored.

A training config has three optional sections::

    {"model": {...ModelConfig fields...},
     "train": {...TrainConfig fields...},
     "data":  {...SyntheticDataset fields...}}

A model config file is just the ``model`` mapping. The training seed falls
back to the ``MIXFORMER_SEED`` environment variable, then to 0.
"""
from __future__ import annotations

import json
import os
from dataclasses import fields
from pathlib import Path

from .backbone import ModelConfig
from .block import ConfigError
from .training import MICRO_MODEL, SyntheticDataset, TrainConfig

SEED_ENV = "MIXFORMER_SEED"


def env_seed(default: int = 0) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def _read(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _build(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def load_model_config(path) -> ModelConfig:
    return ModelConfig.from_dict(_read(path))


def parse_train_config(data: dict) -> tuple:
    """Return ``(ModelConfig, TrainConfig, SyntheticDataset)`` from a parsed mapping."""
    unknown = set(data) - {"model", "train", "data"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    model = ModelConfig.from_dict(data["model"]) if "model" in data else MICRO_MODEL
    train = dict(data.get("train", {}))
    train.setdefault("seed", env_seed())
    train_cfg = _build(TrainConfig, train, "train")
    data_section = dict(data.get("data", {}))
    data_section.setdefault("seed", train_cfg.seed)
    data_section.setdefault("num_classes", model.num_classes)
    return model, train_cfg, _build(SyntheticDataset, data_section, "data")


def load_train_config(path) -> tuple:
    return parse_train_config(_read(path))
