"""Gaussian kernel density estimate over training valence-arousal values.

The estimate weights the training loss: samples in sparse regions of the
V-A plane get weight ``1 / density``. Bandwidths follow Silverman's rule of
thumb for two dimensions, ``h_i = sigma_i * n ** (-1 / 6)``, with the sample
standard deviation taken with an ``n - 1`` denominator. Bandwidths are floored
at 0.1 so that a degenerate or nearly degenerate axis (a single sample, or all
ratings equal) does not collapse the kernel toward a delta spike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.special import logsumexp

from . import container
from .errors import EmptySamples, ValidationError
from .va import VAPoint

DEFAULT_MIN_DENSITY = 1e-4
# lower bound on any fitted bandwidth; also the value for zero-spread axes
MIN_BANDWIDTH = 0.1
SILVERMAN_EXPONENT = -1.0 / 6.0

_MAGIC = b"AFSHKDE\x00"
_TINY = np.nextafter(0.0, 1.0)


def _as_array(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        arr = np.asarray(samples, dtype=np.float64)
    else:
        arr = np.array([tuple(p) for p in samples], dtype=np.float64)
    return arr.reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class DensityModel:
    samples: np.ndarray  # (n, 2) float64, read-only
    bandwidth: tuple[float, float]
    min_density: float = DEFAULT_MIN_DENSITY

    def __post_init__(self):
        samples = _as_array(self.samples).copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if samples.shape[0] == 0:
            raise EmptySamples("density model needs at least one sample")
        h_v, h_a = (float(h) for h in self.bandwidth)
        if not (h_v > 0 and h_a > 0):
            raise ValidationError(f"bandwidths must be positive, got {self.bandwidth}")
        object.__setattr__(self, "bandwidth", (h_v, h_a))
        if not self.min_density > 0:
            raise ValidationError(f"min_density must be positive, got {self.min_density}")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other):
        if not isinstance(other, DensityModel):
            return NotImplemented
        return (
            self.bandwidth == other.bandwidth
            and self.min_density == other.min_density
            and np.array_equal(self.samples, other.samples)
        )

    def save(self, path: str | Path) -> None:
        meta = {"bandwidth": list(self.bandwidth), "min_density": self.min_density}
        container.write(path, _MAGIC, meta, {"samples": self.samples})

    @classmethod
    def load(cls, path: str | Path) -> "DensityModel":
        meta, arrays = container.read(path, _MAGIC)
        return cls(arrays["samples"], tuple(meta["bandwidth"]), meta["min_density"])


def silverman_bandwidth(values: np.ndarray) -> float:
    n = values.shape[0]
    sigma = float(np.std(values, ddof=1)) if n > 1 else 0.0
    return max(sigma * n**SILVERMAN_EXPONENT, MIN_BANDWIDTH)


def fit_kde(samples: Iterable[VAPoint] | np.ndarray, min_density: float = DEFAULT_MIN_DENSITY) -> DensityModel:
    arr = _as_array(samples)
    if arr.shape[0] == 0:
        raise EmptySamples("cannot fit a density to zero samples")
    bandwidth = (silverman_bandwidth(arr[:, 0]), silverman_bandwidth(arr[:, 1]))
    return DensityModel(arr, bandwidth, min_density)


_CHUNK_ELEMENTS = 1 << 22  # bounds the (points x samples) working set


def log_density_many(model: DensityModel, points) -> np.ndarray:
    """Log-density at each row of an ``(m, 2)`` array."""
    pts = _as_array(points)
    h_v, h_a = model.bandwidth
    log_norm = math.log(model.n * 2.0 * math.pi * h_v * h_a)
    out = np.empty(len(pts))
    step = max(1, _CHUNK_ELEMENTS // model.n)
    for lo in range(0, len(pts), step):
        chunk = pts[lo : lo + step]
        dv = (chunk[:, None, 0] - model.samples[None, :, 0]) / h_v
        da = (chunk[:, None, 1] - model.samples[None, :, 1]) / h_a
        out[lo : lo + step] = logsumexp(-0.5 * (dv * dv + da * da), axis=1) - log_norm
    return out


def density_many(model: DensityModel, points) -> np.ndarray:
    """Density at each row of an ``(m, 2)`` array.

    Far tails that underflow float64 are reported as the smallest positive
    subnormal, so the result is always strictly positive.
    """
    return np.maximum(np.exp(log_density_many(model, points)), _TINY)


def density_at(model: DensityModel, p: VAPoint) -> float:
    return float(density_many(model, [tuple(p)])[0])


def loss_weight(model: DensityModel, p: VAPoint) -> float:
    return 1.0 / max(density_at(model, p), model.min_density)


def loss_weights(model: DensityModel, points) -> np.ndarray:
    return 1.0 / np.maximum(density_many(model, points), model.min_density)
