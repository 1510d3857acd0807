"""Per-item metrics and the pluggable model ports behind them."""

from __future__ import annotations

from typing import Callable, NamedTuple, Protocol, Sequence

import numpy as np

from ..dataset import PlantedMapping
from ..errors import MissingPort, TooFewItems
from ..va import VA_MAX, VA_MIN, VAPoint


class VAError(NamedTuple):
    a_err: float
    v_err: float


def va_error(pred: VAPoint, target: VAPoint) -> VAError:
    return VAError(abs(pred.arousal - target.arousal), abs(pred.valence - target.valence))


def euclidean(x, y) -> float:
    return float(np.linalg.norm(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)))


def continuity_score(distance_fn: Callable[[object, object], float], items: Sequence) -> float:
    """Mean distance between consecutive items of a sweep (lower is smoother)."""
    if len(items) < 2:
        raise TooFewItems(f"continuity needs at least 2 items, got {len(items)}")
    dists = [float(distance_fn(items[i], items[i + 1])) for i in range(len(items) - 1)]
    return float(np.mean(dists))


class VAPredictor(Protocol):
    """Estimates the V-A values an output evokes (an image model in practice)."""

    identity: str

    def predict(self, item) -> VAPoint: ...


class SimilarityPort(Protocol):
    identity: str

    def score(self, item, reference) -> float: ...


class QualityPort(Protocol):
    identity: str

    def score(self, item) -> float: ...


class PlantedVAPredictor:
    """Reads V-A back out of a residual feature built by a planted mapping.

    Least-squares projection of the residual onto the mapping's basis
    recovers its coefficients; the linear ones are v/3 and a/3. Exact (up to
    quantization) on planted residuals, and monotone in them.
    """

    def __init__(self, planted: PlantedMapping):
        self.planted = planted
        self.identity = f"planted-lstsq-{planted.seq_len}x{planted.d_prompt}-s{planted.scale}"
        basis = planted.basis().reshape(5, -1).T * planted.scale
        self._pinv = np.linalg.pinv(basis)

    def predict(self, residual) -> VAPoint:
        coeffs = self._pinv @ np.asarray(residual, dtype=np.float64).reshape(-1)
        v, a = np.clip(3.0 * coeffs[:2], VA_MIN, VA_MAX)
        return VAPoint(float(v), float(a))


class FeatureCosineSimilarity:
    """Cosine similarity between flattened feature tensors.

    Feature-level stand-in for an image-text similarity model.
    """

    identity = "feature-cosine"

    def score(self, item, reference) -> float:
        x = np.asarray(item, dtype=np.float64).reshape(-1)
        y = np.asarray(reference, dtype=np.float64).reshape(-1)
        return float(x @ y / (np.linalg.norm(x) * np.linalg.norm(y)))


def require_port(port, metric: str):
    if port is None:
        raise MissingPort(f"metric {metric!r} needs a backing model, but no {metric} port is configured")
    return port
