"""Paired-prompt datasets, the prompt-encoder port, and the synthetic toy set.

Dataset files are JSON Lines, one record per line::

    {"neutral_prompt": "...", "emotional_prompt": "...",
     "valence": 1.2, "arousal": -0.4, "source_id": "oasis-0001"}

``source_id`` is optional. Blank lines are ignored.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .container import atomic_write_bytes
from .errors import CacheCorruption, EncoderFailure, ParseError, ShapeMismatch, ValidationError
from .va import VAPoint, validate_va


@dataclass(frozen=True)
class PairedSample:
    neutral_prompt: str
    emotional_prompt: str
    va: VAPoint
    source_id: str | None = None


@dataclass(frozen=True, eq=False)
class EncodedSample:
    f_n: np.ndarray  # (L, D_prompt)
    f_e: np.ndarray
    va: VAPoint
    sample_id: str = ""

    def __post_init__(self):
        if self.f_n.shape != self.f_e.shape:
            raise ShapeMismatch(f"f_n {self.f_n.shape} vs f_e {self.f_e.shape}")


@runtime_checkable
class PromptEncoderPort(Protocol):
    """A frozen text encoder. ``encode`` must be deterministic."""

    identity: str
    seq_len: int
    d_prompt: int

    def encode(self, text: str) -> np.ndarray: ...


class HashPromptEncoder:
    """Deterministic stand-in for a pretrained text encoder.

    Each word maps to a pseudo-random vector seeded by its hash, mixed with a
    fixed per-position vector. Positions past the last word get a padding
    vector, so every output has the full ``(seq_len, d_prompt)`` shape.
    """

    def __init__(self, seq_len: int = 77, d_prompt: int = 2048):
        self.seq_len = seq_len
        self.d_prompt = d_prompt
        self.identity = f"hash-toy-v1-L{seq_len}-D{d_prompt}"

    def _vector(self, key: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")
        return np.random.default_rng(seed).standard_normal(self.d_prompt)

    def encode(self, text: str) -> np.ndarray:
        words = re.findall(r"\w+", text.lower())[: self.seq_len - 1]
        tokens = ["<bos>"] + words
        rows = []
        for i in range(self.seq_len):
            tok = tokens[i] if i < len(tokens) else "<pad>"
            rows.append(self._vector("tok:" + tok) + 0.1 * self._vector(f"pos:{i}"))
        return np.stack(rows).astype(np.float32)


def _parse_record(line: str, lineno: int) -> PairedSample:
    try:
        rec = json.loads(line)
    except ValueError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
    if not isinstance(rec, dict):
        raise ParseError("record must be a JSON object", line=lineno)
    prompts = {}
    for key in ("neutral_prompt", "emotional_prompt"):
        if key not in rec:
            raise ValidationError("missing field", line=lineno, field=key)
        value = rec[key]
        if not isinstance(value, str) or not value.strip():
            raise ValidationError("must be a non-empty string", line=lineno, field=key)
        prompts[key] = value
    coords = {}
    for key in ("valence", "arousal"):
        value = rec.get(key)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"must be a number, got {value!r}", line=lineno, field=key)
        coords[key] = value
    try:
        va = validate_va(coords["valence"], coords["arousal"])
    except ValidationError as exc:
        raise exc.at_line(lineno) from None
    source_id = rec.get("source_id")
    if source_id is not None and not isinstance(source_id, str):
        raise ValidationError("must be a string", line=lineno, field="source_id")
    return PairedSample(prompts["neutral_prompt"], prompts["emotional_prompt"], va, source_id)


def load_dataset(path: str | Path) -> list[PairedSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                samples.append(_parse_record(line, lineno))
    return samples


def write_dataset(samples: Iterable[PairedSample], path: str | Path) -> None:
    lines = []
    for s in samples:
        rec = {
            "neutral_prompt": s.neutral_prompt,
            "emotional_prompt": s.emotional_prompt,
            "valence": s.va.valence,
            "arousal": s.va.arousal,
        }
        if s.source_id is not None:
            rec["source_id"] = s.source_id
        lines.append(json.dumps(rec, ensure_ascii=False))
    atomic_write_bytes(path, ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8"))


class FeatureCache:
    """On-disk prompt features keyed by encoder identity and text hash.

    Layout: ``<root>/<encoder identity>/<sha256(text)>.npy``. Writes go
    through a temp file and rename, so concurrent writers never expose a
    partial file.
    """

    def __init__(self, root: str | Path, encoder: PromptEncoderPort):
        self.encoder = encoder
        safe = re.sub(r"[^A-Za-z0-9._-]", "_", encoder.identity)
        self.dir = Path(root) / safe
        self.hits = 0
        self.misses = 0

    def path_for(self, text: str) -> Path:
        return self.dir / (hashlib.sha256(text.encode("utf-8")).hexdigest() + ".npy")

    def _read(self, path: Path) -> np.ndarray:
        try:
            arr = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise CacheCorruption(f"{path}: unreadable cache entry: {exc}") from exc
        expected = (self.encoder.seq_len, self.encoder.d_prompt)
        if arr.shape != expected or not np.issubdtype(arr.dtype, np.floating):
            raise CacheCorruption(f"{path}: cached feature has shape {arr.shape} {arr.dtype}, expected {expected}")
        return arr

    def get(self, text: str) -> np.ndarray:
        path = self.path_for(text)
        if path.exists():
            self.hits += 1
            return self._read(path)
        self.misses += 1
        try:
            arr = np.asarray(self.encoder.encode(text))
        except Exception as exc:
            raise EncoderFailure(f"encoder {self.encoder.identity!r} failed on {text[:60]!r}: {exc}") from exc
        expected = (self.encoder.seq_len, self.encoder.d_prompt)
        if arr.shape != expected:
            raise EncoderFailure(f"encoder returned shape {arr.shape}, reported {expected}")
        buf = io.BytesIO()
        np.save(buf, arr, allow_pickle=False)
        atomic_write_bytes(path, buf.getvalue())
        return arr


def encode_dataset(
    samples: Sequence[PairedSample],
    encoder: PromptEncoderPort,
    cache_dir: str | Path,
    stats: dict | None = None,
) -> list[EncodedSample]:
    """Encode both prompts of every sample, one encoder call per distinct text.

    If ``stats`` is given it receives ``encoder_calls`` and ``cache_hits``.
    """
    cache = FeatureCache(cache_dir, encoder)
    memo: dict[str, np.ndarray] = {}

    def feature(text):
        if text not in memo:
            memo[text] = cache.get(text)
        return memo[text]

    out = []
    for i, s in enumerate(samples):
        sid = s.source_id if s.source_id is not None else str(i)
        out.append(EncodedSample(feature(s.neutral_prompt), feature(s.emotional_prompt), s.va, sid))
    if stats is not None:
        stats["encoder_calls"] = cache.misses
        stats["cache_hits"] = cache.hits
    return out


def split_train_val(samples: Sequence, seed: int = 0, val_fraction: float = 0.05) -> tuple[list, list]:
    """Deterministic split on a hash of each sample's id (or its index)."""
    train, val = [], []
    for i, s in enumerate(samples):
        key = getattr(s, "source_id", None) or getattr(s, "sample_id", None) or str(i)
        digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
        u = int.from_bytes(digest[:8], "little") / 2**64
        (val if u < val_fraction else train).append(s)
    return train, val


# --- synthetic toy data -------------------------------------------------------

# features and planted shifts live on this grid so f_n + G is exact in float32
QUANTUM = 2.0**-12


def _quantize(x: np.ndarray) -> np.ndarray:
    return (np.round(x / QUANTUM) * QUANTUM).astype(np.float32)


@dataclass(frozen=True)
class PlantedMapping:
    """Known emotion shift ``G(v, a)`` used by the toy dataset.

    With ``x = v / 3`` and ``y = a / 3``::

        G(v, a) = scale * (x U + y W + x y X + sin(pi x) S + sin(pi y) T)

    where U, W, X, S, T are fixed ``(L, D)`` Gaussian tensors drawn from
    ``basis_seed``. The bilinear part is low rank in (v, a); the sine terms
    make it non-linear so that sparse V-A regions cannot be recovered by
    linear extrapolation from dense ones. Output is quantized to ``QUANTUM``.
    """

    seq_len: int
    d_prompt: int
    scale: float = 0.5
    basis_seed: int = 20240611

    def basis(self) -> np.ndarray:
        rng = np.random.default_rng(self.basis_seed)
        return rng.standard_normal((5, self.seq_len, self.d_prompt)) / math.sqrt(5)

    def __call__(self, va: VAPoint) -> np.ndarray:
        x, y = va.valence / 3.0, va.arousal / 3.0
        coeffs = np.array([x, y, x * y, math.sin(math.pi * x), math.sin(math.pi * y)])
        return _quantize(self.scale * np.tensordot(coeffs, self.basis(), axes=1))


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: tuple[float, float]
    std: float


# deliberately unbalanced: one dense mode, one sparse mode, thin background
DEFAULT_MIXTURE = (
    MixtureComponent(0.75, (1.5, 1.0), 0.5),
    MixtureComponent(0.15, (-1.5, -1.5), 0.5),
    MixtureComponent(0.10, (0.0, 0.0), 1.5),
)


def sample_mixture(rng: np.random.Generator, count: int, mixture=DEFAULT_MIXTURE) -> np.ndarray:
    weights = np.array([c.weight for c in mixture], dtype=np.float64)
    weights /= weights.sum()
    out = np.empty((count, 2))
    for i in range(count):
        comp = mixture[rng.choice(len(mixture), p=weights)]
        while True:  # resample points that fall outside [-3, 3]^2
            p = rng.normal(comp.mean, comp.std)
            if np.all(np.abs(p) <= 3.0):
                break
        out[i] = p
    return out


@dataclass(frozen=True)
class ToyConfig:
    seq_len: int = 4
    d_prompt: int = 16
    planted_scale: float = 0.5
    mixture: tuple = field(default=DEFAULT_MIXTURE)

    def planted(self) -> PlantedMapping:
        return PlantedMapping(self.seq_len, self.d_prompt, self.planted_scale)


def synth_toy_dataset(seed: int, count: int, config: ToyConfig = ToyConfig()) -> list[EncodedSample]:
    """Random neutral features with ``f_e = f_n + G(v, a)`` exactly."""
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}", field="count")
    rng = np.random.default_rng(seed)
    planted = config.planted()
    va = sample_mixture(rng, count, config.mixture)
    out = []
    for i in range(count):
        f_n = _quantize(np.clip(rng.standard_normal((config.seq_len, config.d_prompt)), -8, 8))
        p = validate_va(float(va[i, 0]), float(va[i, 1]))
        f_e = f_n + planted(p)
        out.append(EncodedSample(f_n, f_e, p, f"toy-{seed}-{i}"))
    return out
