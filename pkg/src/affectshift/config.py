"""Run configuration files.

A config file is YAML with up to three sections whose keys mirror the
dataclass field names exactly::

    model:   # EITConfig
      num_blocks: 2
      d_model: 32
    train:   # TrainConfig scalars
      learning_rate: 1.0e-3
      epochs: 50
    loss:    # LossConfig
      alpha: 1.5
      min_density: 1.0e-4

Precedence, lowest first: built-in defaults, the config file, CLI flags.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

import yaml

from .errors import ParseError, ValidationError
from .loss import LossConfig
from .model import EITConfig
from .training import TrainConfig

SECTIONS = ("model", "train", "loss")


def _coerce(cls, section: str, raw: dict) -> dict:
    hints = typing.get_type_hints(cls)
    out = {}
    for key, value in raw.items():
        if key not in hints or key in SECTIONS:
            raise ValidationError(f"unknown key {key!r} in [{section}]", field=key)
        hint = str(hints[key])
        # YAML 1.1 reads "1e-3" (no dot) as a string
        if isinstance(value, str) and "float" in hint:
            try:
                value = float(value)
            except ValueError:
                raise ValidationError(f"{section}.{key}: not a number: {value!r}", field=key) from None
        elif isinstance(value, int) and not isinstance(value, bool) and hint == "<class 'float'>":
            value = float(value)
        out[key] = value
    return out


def parse_config(data: dict | None, base: TrainConfig | None = None) -> TrainConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ValidationError("config file must be a mapping")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    base = base or TrainConfig.desk()
    model = dataclasses.replace(base.model, **_coerce(EITConfig, "model", data.get("model") or {}))
    loss = dataclasses.replace(base.loss, **_coerce(LossConfig, "loss", data.get("loss") or {}))
    train = _coerce(TrainConfig, "train", data.get("train") or {})
    return dataclasses.replace(base, model=model, loss=loss, **train)


def load_config(path: str | Path | None, base: TrainConfig | None = None) -> TrainConfig:
    if path is None:
        return parse_config({}, base)
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return parse_config(data, base)


def config_to_dict(cfg: TrainConfig) -> dict:
    d = cfg.to_dict()
    model, loss = d.pop("model"), d.pop("loss")
    return {"model": model, "train": d, "loss": loss}


def dump_config(cfg: TrainConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
