"""Training loop with AdamW, checkpointing and exact resume."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch

from . import container
from .checkpoint import model_from_arrays, save_checkpoint, state_arrays
from .density import DensityModel
from .errors import CorruptCheckpoint, EmptyBatch, NonFiniteLoss, SinkFailure, ValidationError
from .loss import Batch, LossConfig, collate, per_sample_losses
from .model import EITConfig, EmotionInjectionTransformer, build_model, check_config

log = logging.getLogger(__name__)

STATE_MAGIC = b"AFSHSTAT"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 200
    batch_size: int = 768
    seed: int = 0
    checkpoint_every: int = 1  # epochs between train-state saves
    max_steps: int | None = None  # stop early after this many optimizer steps
    grad_clip: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    use_density: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    model: EITConfig = field(default_factory=EITConfig)

    def __post_init__(self):
        for name in ("learning_rate", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"must be positive, got {getattr(self, name)!r}", field=name)
        if self.weight_decay < 0:
            raise ValidationError("must be >= 0", field="weight_decay")
        for name in ("epochs", "batch_size", "checkpoint_every"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValidationError(f"must be a positive integer, got {value!r}", field=name)
        if self.max_steps is not None and self.max_steps < 1:
            raise ValidationError("must be a positive integer", field="max_steps")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValidationError("must be positive", field="grad_clip")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small batches and the tiny model geometry, for CPU-sized runs."""
        base = dict(batch_size=16, model=EITConfig.tiny())
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown training config keys: {sorted(unknown)}")
        if isinstance(data.get("loss"), dict):
            data["loss"] = LossConfig(**data["loss"])
        if isinstance(data.get("model"), dict):
            data["model"] = EITConfig.from_dict(data["model"])
        return cls(**data)


@dataclass
class TrainState:
    model: EmotionInjectionTransformer
    optimizer: torch.optim.AdamW
    config: TrainConfig
    step: int = 0
    epoch: int = 0
    best_val: float = math.inf
    history: list = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        arrays = {f"model/{k}": v for k, v in state_arrays(self.model).items()}
        opt = self.optimizer.state_dict()
        for idx, st in opt["state"].items():
            for key, value in st.items():
                arrays[f"opt/{idx}/{key}"] = value.detach().cpu().numpy()
        meta = {
            "kind": "train_state",
            "config": _jsonable(self.config.to_dict()),
            "step": self.step,
            "epoch": self.epoch,
            "best_val": None if math.isinf(self.best_val) else self.best_val,
        }
        container.write(path, STATE_MAGIC, meta, arrays)

    @classmethod
    def load(cls, path: str | Path, config: TrainConfig | None = None) -> "TrainState":
        meta, arrays = container.read(path, STATE_MAGIC)
        if meta.get("kind") != "train_state":
            raise CorruptCheckpoint(f"{path}: not a training state file")
        saved = TrainConfig.from_dict(meta["config"])
        if config is not None:
            check_config(config.model, saved.model)
        else:
            config = saved
        model_arrays = {k[len("model/"):]: v for k, v in arrays.items() if k.startswith("model/")}
        model = model_from_arrays(saved.model, model_arrays, str(path))
        optimizer = make_optimizer(model, config)
        opt_state = optimizer.state_dict()
        per_param: dict[int, dict] = {}
        for key, value in arrays.items():
            if key.startswith("opt/"):
                _, idx, name = key.split("/")
                per_param.setdefault(int(idx), {})[name] = torch.from_numpy(value.copy())
        opt_state["state"] = per_param
        optimizer.load_state_dict(opt_state)
        best = meta["best_val"]
        return cls(model, optimizer, config, meta["step"], meta["epoch"], math.inf if best is None else best)


def _jsonable(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


def make_optimizer(model: torch.nn.Module, config: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
        foreach=False,
    )


class MetricsSink(Protocol):
    def log(self, record: dict) -> None: ...

    def save_state(self, state: TrainState, name: str) -> None: ...


class MemorySink:
    """Keeps metric records in memory and discards checkpoints."""

    def __init__(self):
        self.records: list[dict] = []
        self.saved: list[str] = []

    def log(self, record):
        self.records.append(dict(record))

    def save_state(self, state, name):
        self.saved.append(name)


class DirectorySink:
    """Writes ``metrics.jsonl``, model checkpoints and the resumable train state.

    Files: ``metrics.jsonl``, ``final.ckpt``, ``best.ckpt``, ``state.ckpt``.
    """

    def __init__(self, out_dir: str | Path):
        self.dir = Path(out_dir)
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise SinkFailure(f"cannot create {self.dir}: {exc}") from exc
        self.metrics_path = self.dir / "metrics.jsonl"

    def log(self, record):
        try:
            with open(self.metrics_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
        except OSError as exc:
            raise SinkFailure(f"cannot append to {self.metrics_path}: {exc}") from exc

    def save_state(self, state, name):
        try:
            if name == "state":
                state.save(self.dir / "state.ckpt")
            else:
                save_checkpoint(state.model, state.config.model, self.dir / f"{name}.ckpt",
                                extra={"step": state.step, "epoch": state.epoch})
        except OSError as exc:
            raise SinkFailure(f"cannot write {name} checkpoint: {exc}") from exc


def _as_batch(data, model, density, config) -> Batch:
    if isinstance(data, Batch):
        return data
    if len(data) == 0:
        raise EmptyBatch("no samples")
    dens = None
    if density is not None and config.use_density:
        dens = DensityModel(density.samples, density.bandwidth, config.loss.min_density)
    return collate(data, model.config.seq_len, dens, next(model.parameters()).dtype)


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


@torch.no_grad()
def validate(model: EmotionInjectionTransformer, val_data, density: DensityModel | None, loss_cfg: LossConfig, chunk: int = 1024) -> float:
    """Mean weighted loss over ``val_data`` without touching parameters."""
    if not isinstance(val_data, Batch):
        if len(val_data) == 0:
            raise EmptyBatch("validation set is empty")
        if density is not None:
            density = DensityModel(density.samples, density.bandwidth, loss_cfg.min_density)
        val_data = collate(val_data, model.config.seq_len, density, next(model.parameters()).dtype)
    total = 0.0
    n = len(val_data)
    for lo in range(0, n, chunk):
        part = val_data.select(range(lo, min(lo + chunk, n)))
        total += float(per_sample_losses(model, part, loss_cfg.alpha).double().sum())
    return total / n


def train(
    config: TrainConfig,
    data: Sequence,
    density: DensityModel | None,
    sink: MetricsSink | None = None,
    val_data: Sequence | None = None,
    state: TrainState | None = None,
) -> TrainState:
    """Run AdamW on the weighted loss; resumes from ``state`` when given.

    The shuffle order of each epoch is a pure function of (seed, epoch), so a
    run resumed from a saved state replays the same batches as an
    uninterrupted one.
    """
    sink = sink or MemorySink()
    if state is None:
        model = build_model(config.model, seed=config.seed)
        state = TrainState(model, make_optimizer(model, config), config)
    model, optimizer = state.model, state.optimizer
    train_batch = _as_batch(data, model, density, config)
    val_batch = _as_batch(val_data, model, density, config) if val_data else None
    n = len(train_batch)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)
    mean_weight = float(train_batch.weights.double().mean())
    log.info("training %d samples, %d steps/epoch, %d steps total, mean density weight %.4g",
             n, steps_per_epoch, total_steps, mean_weight)

    t0 = time.monotonic()
    epoch_losses: list[float] = []
    while state.step < total_steps:
        epoch, pos = divmod(state.step, steps_per_epoch)
        state.epoch = epoch
        order = epoch_order(config.seed, epoch, n)
        idx = order[pos * config.batch_size : (pos + 1) * config.batch_size]
        batch = train_batch.select(idx)

        model.train()
        optimizer.zero_grad(set_to_none=False)
        loss = per_sample_losses(model, batch, config.loss.alpha).mean()
        if not torch.isfinite(loss):
            raise NonFiniteLoss(state.step, batch.ids, float(loss.detach()))
        loss.backward()
        if config.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        optimizer.step()
        _guard_params(model, state.step, batch.ids)
        state.step += 1
        epoch_losses.append(float(loss.detach()))

        end_of_epoch = state.step % steps_per_epoch == 0
        if end_of_epoch or state.step == total_steps:
            train_loss = float(np.mean(epoch_losses))
            epoch_losses = []
            val_loss = validate(model, val_batch, None, config.loss) if val_batch is not None else None
            record = {
                "step": state.step,
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "mean_density_weight": mean_weight,
                "wall_time": time.monotonic() - t0,
            }
            state.history.append(record)
            sink.log(record)
            score = val_loss if val_loss is not None else train_loss
            if score < state.best_val:
                state.best_val = score
                sink.save_state(state, "best")
            if (epoch + 1) % config.checkpoint_every == 0 or state.step == total_steps:
                sink.save_state(state, "state")
    sink.save_state(state, "final")
    sink.save_state(state, "state")
    return state


def _guard_params(model, step, ids):
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise NonFiniteLoss(step, ids, f"parameter {name} became non-finite")
