"""Scale-factor ablation on the planted toy set.

The network is trained toward ``f_n + alpha * (f_e - f_n)`` for several
alphas. On planted data ``f_e - f_n = G(v, a)``, so a converged model should
output a residual of ``alpha * G``. Columns reported per alpha:

residual_magnitude
    mean ``||f_hat - f_n||``; how strongly the emotion shifts the feature.
semantic_drift
    mean ``1 - cos(f_hat, f_n)``; loss of alignment with the neutral prompt,
    the feature-level analogue of an image-prompt similarity drop.
emotion_error
    mean ``||(f_hat - f_n) - alpha G||`` over mean ``||G||``; planted-mapping
    recovery error.
target_deviation
    mean ``||f_hat - f_e||`` over mean ``||f_e - f_n||``; distance from the
    unscaled emotional feature.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import torch

from ..dataset import EncodedSample, PlantedMapping
from ..density import fit_kde
from ..loss import LossConfig, collate
from ..model import EmotionInjectionTransformer
from ..training import TrainConfig, train


@dataclass(frozen=True)
class ToyEval:
    train_data: Sequence[EncodedSample]
    eval_data: Sequence[EncodedSample]
    planted: PlantedMapping


@dataclass(frozen=True)
class AblationRow:
    alpha: float
    residual_magnitude: float
    semantic_drift: float
    emotion_error: float
    target_deviation: float
    final_train_loss: float


@torch.no_grad()
def predict_features(model: EmotionInjectionTransformer, samples: Sequence[EncodedSample]) -> np.ndarray:
    batch = collate(samples, model.config.seq_len, None, next(model.parameters()).dtype)
    key_mask = None if batch.mask.all() else batch.mask
    out = model(batch.f_n, batch.valence, batch.arousal, key_mask)
    return out.double().numpy()


def _flat_norms(x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x.reshape(x.shape[0], -1), axis=1)


def feature_metrics(model, samples, planted: PlantedMapping, alpha: float) -> dict:
    f_hat = predict_features(model, samples)
    f_n = np.stack([s.f_n for s in samples]).astype(np.float64)
    f_e = np.stack([s.f_e for s in samples]).astype(np.float64)
    g = np.stack([planted(s.va) for s in samples]).astype(np.float64)
    resid = f_hat - f_n
    cos = (f_hat * f_n).reshape(len(samples), -1).sum(1) / (_flat_norms(f_hat) * _flat_norms(f_n))
    return {
        "residual_magnitude": float(_flat_norms(resid).mean()),
        "semantic_drift": float((1.0 - cos).mean()),
        "emotion_error": float(_flat_norms(resid - alpha * g).mean() / _flat_norms(g).mean()),
        "target_deviation": float(_flat_norms(f_hat - f_e).mean() / _flat_norms(f_e - f_n).mean()),
    }


def planted_recovery_error(model, samples, planted: PlantedMapping, alpha: float) -> float:
    """Mean ``||predicted residual - alpha G||`` relative to mean ``||G||``."""
    return feature_metrics(model, samples, planted, alpha)["emotion_error"]


def run_alpha_ablation(base_config: TrainConfig, alphas: Sequence[float], toy_eval: ToyEval, parallel: bool = False) -> list[AblationRow]:
    """Train one model per alpha and measure it on ``toy_eval.eval_data``."""
    density = fit_kde([s.va for s in toy_eval.train_data], base_config.loss.min_density)

    def one(alpha):
        cfg = replace(base_config, loss=LossConfig(alpha=float(alpha), min_density=base_config.loss.min_density))
        state = train(cfg, toy_eval.train_data, density)
        m = feature_metrics(state.model, toy_eval.eval_data, toy_eval.planted, float(alpha))
        return AblationRow(alpha=float(alpha), final_train_loss=state.history[-1]["train_loss"], **m)

    if parallel:
        with ThreadPoolExecutor() as pool:
            return list(pool.map(one, alphas))
    return [one(a) for a in alphas]


def render_ablation(rows: Sequence[AblationRow]) -> str:
    head = f"{'alpha':>6}  {'residual':>9}  {'drift':>9}  {'emo_err':>9}  {'tgt_dev':>9}"
    lines = [head]
    for r in rows:
        lines.append(
            f"{r.alpha:6.2f}  {r.residual_magnitude:9.4f}  {r.semantic_drift:9.5f}"
            f"  {r.emotion_error:9.4f}  {r.target_deviation:9.4f}"
        )
    return "\n".join(lines)
