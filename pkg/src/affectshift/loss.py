"""Training objective: scaled residual targets and density-weighted MSE."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .density import DEFAULT_MIN_DENSITY, DensityModel, loss_weights
from .errors import EmptyBatch, ShapeMismatch, ValidationError
from .model import EmotionInjectionTransformer, pad_prompt

DEFAULT_ALPHA = 1.5


@dataclass(frozen=True)
class LossConfig:
    alpha: float = DEFAULT_ALPHA
    min_density: float = DEFAULT_MIN_DENSITY

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValidationError(f"alpha must be finite and >= 0, got {self.alpha!r}", field="alpha")
        if not self.min_density > 0:
            raise ValidationError(f"must be positive, got {self.min_density!r}", field="min_density")


def _tensor(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))


def scaled_target(f_n, f_e, alpha: float):
    """``f_n + alpha * (f_e - f_n)``; exact at alpha 0 and 1."""
    f_n, f_e = _tensor(f_n), _tensor(f_e)
    if f_n.shape != f_e.shape:
        raise ShapeMismatch(f"f_n {tuple(f_n.shape)} vs f_e {tuple(f_e.shape)}")
    # lerp switches to the end-anchored form for alpha >= 0.5
    return torch.lerp(f_n, f_e, float(alpha))


def weighted_sample_loss(f_hat, f_target, weight: float, mask=None):
    """``weight * ||f_hat - f_target||^2 / n`` over the unmasked elements.

    ``mask`` marks valid token rows; n counts only their elements.
    """
    f_hat, f_target = _tensor(f_hat), _tensor(f_target)
    if f_hat.shape != f_target.shape:
        raise ShapeMismatch(f"prediction {tuple(f_hat.shape)} vs target {tuple(f_target.shape)}")
    sq = (f_hat - f_target) ** 2
    if mask is None:
        return weight * sq.sum() / sq.numel()
    mask = _tensor(mask).to(sq.dtype)
    n = mask.sum() * sq.shape[-1]
    return weight * (sq * mask[..., None]).sum() / n


@dataclass
class Batch:
    """Collated training samples, padded to the model's sequence length."""

    f_n: torch.Tensor  # (B, L, D)
    f_e: torch.Tensor
    valence: torch.Tensor  # (B,)
    arousal: torch.Tensor
    mask: torch.Tensor  # (B, L) bool
    weights: torch.Tensor  # (B,)
    ids: list

    def __len__(self):
        return self.f_n.shape[0]

    def select(self, index) -> "Batch":
        index = torch.as_tensor(index, dtype=torch.long)
        return Batch(
            self.f_n[index], self.f_e[index], self.valence[index], self.arousal[index],
            self.mask[index], self.weights[index], [self.ids[i] for i in index.tolist()],
        )


def collate(samples: Sequence, seq_len: int, density: DensityModel | None, dtype=torch.float32) -> Batch:
    """Stack encoded samples; weights are ``1/max(d, floor)`` or 1 without a density."""
    if len(samples) == 0:
        raise EmptyBatch("batch is empty")
    f_n, f_e, masks = [], [], []
    for s in samples:
        a, b = _tensor(s.f_n).to(dtype), _tensor(s.f_e).to(dtype)
        if a.shape != b.shape:
            raise ShapeMismatch(f"f_n {tuple(a.shape)} vs f_e {tuple(b.shape)}")
        a, m = pad_prompt(a, seq_len)
        b, _ = pad_prompt(b, seq_len)
        f_n.append(a)
        f_e.append(b)
        masks.append(m)
    va = np.array([(s.va.valence, s.va.arousal) for s in samples], dtype=np.float64)
    if density is None:
        w = np.ones(len(samples))
    else:
        w = loss_weights(density, va)
    return Batch(
        torch.stack(f_n), torch.stack(f_e),
        torch.as_tensor(va[:, 0], dtype=dtype), torch.as_tensor(va[:, 1], dtype=dtype),
        torch.stack(masks), torch.as_tensor(w, dtype=dtype),
        [getattr(s, "sample_id", i) for i, s in enumerate(samples)],
    )


def per_sample_losses(model: EmotionInjectionTransformer, batch: Batch, alpha: float) -> torch.Tensor:
    key_mask = None if batch.mask.all() else batch.mask
    pred = model(batch.f_n, batch.valence, batch.arousal, key_mask)
    target = scaled_target(batch.f_n, batch.f_e, alpha)
    m = batch.mask.to(pred.dtype)[..., None]
    sse = (((pred - target) ** 2) * m).sum(dim=(1, 2))
    n = batch.mask.sum(dim=1).to(pred.dtype) * pred.shape[-1]
    return batch.weights * sse / n


def batch_loss(model: EmotionInjectionTransformer, batch, density: DensityModel | None, cfg: LossConfig) -> torch.Tensor:
    """Mean over samples of the density-weighted per-element squared error.

    ``batch`` is a list of encoded samples or an already collated Batch (whose
    stored weights are then used as-is). ``density=None`` disables weighting.
    """
    if not isinstance(batch, Batch):
        dtype = next(model.parameters()).dtype
        if density is not None and density.min_density != cfg.min_density:
            density = DensityModel(density.samples, density.bandwidth, cfg.min_density)
        batch = collate(batch, model.config.seq_len, density, dtype)
    if len(batch) == 0:
        raise EmptyBatch("batch is empty")
    return per_sample_losses(model, batch, cfg.alpha).mean()
