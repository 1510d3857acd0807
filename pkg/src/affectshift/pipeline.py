"""Sweeps over the V-A plane, diffusion-backend ports and run manifests."""

from __future__ import annotations

import colorsys
import datetime as _dt
import hashlib
import importlib
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import torch

from . import __version__
from .container import atomic_write_bytes, file_sha256
from .errors import BackendFailure, ValidationError
from .model import EmotionInjectionTransformer, eit_forward
from .va import VAPoint, validate_va

AXES = ("valence", "arousal", "both-grid")
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class SweepSpec:
    prompt: str
    axis: str = "valence"
    start: float = -3.0
    stop: float = 3.0
    step: float = 0.2
    fixed: float = 0.0  # value of the axis held constant in a one-axis sweep

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValidationError(f"axis must be one of {AXES}, got {self.axis!r}", field="axis")
        validate_va(self.start, self.stop)
        validate_va(self.fixed, 0.0)
        if self.start > self.stop:
            raise ValidationError(f"start {self.start} > stop {self.stop}", field="start")
        if not self.step > 0:
            raise ValidationError(f"step must be positive, got {self.step}", field="step")
        span = (self.stop - self.start) / self.step
        if abs(span - round(span)) > _GRID_TOL:
            raise ValidationError(f"step {self.step} does not divide [{self.start}, {self.stop}]", field="step")

    def axis_values(self) -> list[float]:
        count = math.floor((self.stop - self.start) / self.step + _GRID_TOL) + 1
        # round away accumulated error so grid values are reproducible labels
        return [round(self.start + i * self.step, 10) for i in range(count)]

    def points(self) -> list[tuple[int, int, VAPoint]]:
        """(row, col, point) triples in row-major order; rows index valence."""
        values = self.axis_values()
        if self.axis == "valence":
            return [(i, 0, validate_va(v, self.fixed)) for i, v in enumerate(values)]
        if self.axis == "arousal":
            return [(0, j, validate_va(self.fixed, a)) for j, a in enumerate(values)]
        return [(i, j, validate_va(v, a)) for i, v in enumerate(values) for j, a in enumerate(values)]


class DiffusionBackendPort(Protocol):
    """Turns a conditioning feature into an image. Must be deterministic in (conditioning, seed)."""

    identity: str
    thread_safe: bool

    def generate(self, conditioning: np.ndarray, seed: int, info: dict | None = None): ...


def pooled_embedding(conditioning: np.ndarray) -> np.ndarray:
    """Mean over tokens, for backends that also consume a pooled prompt vector."""
    return np.asarray(conditioning).mean(axis=0)


class NullBackend:
    """Renders a small diagnostic image instead of a generation.

    Hue encodes valence, saturation arousal, and brightness the residual
    norm carried in ``info``; the V-A label is drawn on top.
    """

    identity = "null-diagnostic-v1"
    thread_safe = True

    def __init__(self, size: int = 96, norm_scale: float = 1.0):
        self.size = size
        self.norm_scale = norm_scale

    def generate(self, conditioning, seed, info=None):
        from PIL import Image, ImageDraw

        info = info or {}
        v, a = info.get("valence", 0.0), info.get("arousal", 0.0)
        heat = 1.0 - math.exp(-float(info.get("residual_norm", 0.0)) / self.norm_scale)
        hue = (v + 3.0) / 6.0 * 0.33  # red for negative valence, green for positive
        sat = 0.3 + 0.7 * (a + 3.0) / 6.0
        rgb = tuple(int(255 * c) for c in colorsys.hsv_to_rgb(hue, sat, 0.25 + 0.75 * heat))
        img = Image.new("RGB", (self.size, self.size), rgb)
        draw = ImageDraw.Draw(img)
        draw.text((4, 4), f"v={v:+.1f}", fill=(255, 255, 255))
        draw.text((4, 18), f"a={a:+.1f}", fill=(255, 255, 255))
        draw.text((4, 32), f"|r|={info.get('residual_norm', 0.0):.2f}", fill=(255, 255, 255))
        return img


def load_external_backend(spec: str | None = None):
    """Instantiate ``module:factory`` from the argument or ``AFFECTSHIFT_BACKEND``."""
    spec = spec or os.environ.get("AFFECTSHIFT_BACKEND")
    if not spec or ":" not in spec:
        raise BackendFailure("external backend needs AFFECTSHIFT_BACKEND=module:factory")
    mod_name, attr = spec.split(":", 1)
    try:
        factory = getattr(importlib.import_module(mod_name), attr)
        return factory()
    except Exception as exc:
        raise BackendFailure(f"cannot load external backend {spec!r}: {exc}") from exc


def _png_bytes(img) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _npy_bytes(arr) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def run_sweep(
    model: EmotionInjectionTransformer,
    neutral: np.ndarray,
    spec: SweepSpec,
    backend,
    out_dir: str | Path,
    seed: int = 0,
) -> list[dict]:
    """Condition the backend on every grid point and lay the outputs out on disk.

    Writes ``neutral.npy``, ``cond_XXXX.npy`` / ``img_XXXX.png`` per point and
    ``index.json`` mapping grid coordinates to file names. The same backend
    seed is used for every point so only the conditioning varies.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(out / "neutral.npy", _npy_bytes(neutral))
    dtype = next(model.parameters()).dtype
    f_n = torch.from_numpy(np.asarray(neutral)).to(dtype)
    entries = []
    with torch.no_grad():
        for k, (row, col, p) in enumerate(spec.points()):
            cond = eit_forward(model, f_n, p).numpy()
            residual_norm = float(np.linalg.norm(cond.astype(np.float64) - neutral))
            info = {"valence": p.valence, "arousal": p.arousal, "residual_norm": residual_norm}
            try:
                image = backend.generate(cond, seed, info)
            except Exception as exc:
                raise BackendFailure(f"backend {getattr(backend, 'identity', backend)!r} failed at {p}: {exc}") from exc
            cond_name, img_name = f"cond_{k:04d}.npy", f"img_{k:04d}.png"
            atomic_write_bytes(out / cond_name, _npy_bytes(cond))
            if image is not None and hasattr(image, "save"):
                atomic_write_bytes(out / img_name, _png_bytes(image))
            else:
                img_name = None
            entries.append({
                "index": k, "row": row, "col": col,
                "valence": p.valence, "arousal": p.arousal,
                "conditioning": cond_name, "image": img_name,
                "conditioning_sha256": hashlib.sha256(cond.tobytes()).hexdigest(),
                "residual_norm": residual_norm,
            })
    index = {
        "spec": asdict(spec),
        "seed": seed,
        "backend": getattr(backend, "identity", type(backend).__name__),
        "points": entries,
    }
    atomic_write_bytes(out / "index.json", json.dumps(index, indent=1).encode())
    return entries


def load_sweep(sweep_dir: str | Path) -> tuple[dict, np.ndarray, list[np.ndarray]]:
    d = Path(sweep_dir)
    try:
        index = json.loads((d / "index.json").read_text())
    except (OSError, ValueError) as exc:
        raise ValidationError(f"{d}: not a sweep directory ({exc})") from None
    neutral = np.load(d / "neutral.npy", allow_pickle=False)
    conds = [np.load(d / e["conditioning"], allow_pickle=False) for e in index["points"]]
    return index, neutral, conds


# --- run manifests ------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def write_manifest(out_dir: str | Path, command: str, config: dict, inputs: dict[str, str | None], started: str) -> dict:
    """Record what ran, with what inputs, so the run can be repeated.

    ``inputs`` maps a role (``dataset``, ``checkpoint``...) to a path; each
    file's sha256 is stored next to it.
    """
    manifest = {
        "command": command,
        "config": config,
        "inputs": {
            role: {"path": str(Path(p).resolve()), "sha256": file_sha256(p)} for role, p in inputs.items() if p
        },
        "code_version": __version__,
        "python": sys.version.split()[0],
        "torch": torch.__version__,
        "started": started,
        "finished": now_iso(),
    }
    atomic_write_bytes(Path(out_dir) / MANIFEST_NAME, json.dumps(manifest, indent=1, sort_keys=True).encode())
    return manifest


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ValidationError(f"{path}: unreadable manifest: {exc}") from None


def verify_manifest_inputs(manifest: dict) -> None:
    for role, entry in manifest.get("inputs", {}).items():
        got = file_sha256(entry["path"]) if Path(entry["path"]).exists() else None
        if got != entry["sha256"]:
            raise ValidationError(f"manifest input {role} ({entry['path']}) changed since the run", field=role)


def now_iso() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
