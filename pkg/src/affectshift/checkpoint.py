"""Model checkpoint files: config block plus named parameter tensors."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch

from . import container
from .errors import CorruptCheckpoint
from .model import EITConfig, EmotionInjectionTransformer, check_config

MAGIC = b"AFSHCKPT"


def state_arrays(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}


def params_hash(model: torch.nn.Module) -> str:
    """sha256 over parameter names, dtypes, shapes and raw bytes."""
    h = hashlib.sha256()
    for name, arr in state_arrays(model).items():
        h.update(f"{name}|{arr.dtype.str}|{arr.shape}".encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def save_checkpoint(model: EmotionInjectionTransformer, config: EITConfig, path: str | Path, extra: dict | None = None) -> None:
    meta = {"kind": "model", "config": config.to_dict(), "extra": extra or {}}
    container.write(path, MAGIC, meta, state_arrays(model))


def model_from_arrays(config: EITConfig, arrays: dict[str, np.ndarray], source: str) -> EmotionInjectionTransformer:
    model = EmotionInjectionTransformer(config)
    expected = model.state_dict()
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        unexpected = sorted(set(arrays) - set(expected))
        raise CorruptCheckpoint(f"{source}: parameter set mismatch (missing {missing}, unexpected {unexpected})")
    dtypes = {arr.dtype for arr in arrays.values()}
    if len(dtypes) != 1:
        raise CorruptCheckpoint(f"{source}: mixed parameter dtypes {sorted(map(str, dtypes))}")
    model = model.to(getattr(torch, dtypes.pop().name))
    state = {}
    for name, ref in expected.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CorruptCheckpoint(f"{source}: {name} has shape {arr.shape}, config implies {tuple(ref.shape)}")
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model


def load_checkpoint(path: str | Path, expected_config: EITConfig | None = None) -> tuple[EmotionInjectionTransformer, EITConfig]:
    meta, arrays = container.read(path, MAGIC)
    if meta.get("kind") != "model":
        raise CorruptCheckpoint(f"{path}: not a model checkpoint (kind={meta.get('kind')!r})")
    config = EITConfig.from_dict(meta["config"])
    if expected_config is not None:
        check_config(expected_config, config)
    return model_from_arrays(config, arrays, str(path)), config
