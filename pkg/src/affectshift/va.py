"""Valence-arousal coordinates and the discrete emotion preset table."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import NotFinite, OutOfRange, ParseError, UnknownEmotion, ValidationError

VA_MIN = -3.0
VA_MAX = 3.0


@dataclass(frozen=True)
class VAPoint:
    """A (valence, arousal) emotion condition in [-3, 3]^2.

    Construct through :func:`validate_va` to get range checking.
    """

    valence: float
    arousal: float

    def __iter__(self):
        yield self.valence
        yield self.arousal

    def __neg__(self) -> "VAPoint":
        return VAPoint(-self.valence, -self.arousal)


def validate_va(valence, arousal) -> VAPoint:
    """Return a VAPoint, or raise if either coordinate is unusable.

    Values are never clamped.
    """
    for axis, value in (("valence", valence), ("arousal", arousal)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ValidationError(f"not a real number: {value!r}", field=axis) from None
        if not math.isfinite(value):
            raise NotFinite(axis, value)
        if not VA_MIN <= value <= VA_MAX:
            raise OutOfRange(axis, value)
    return VAPoint(float(valence), float(arousal))


@dataclass(frozen=True)
class EmotionPreset:
    name: str
    point: VAPoint


def parse_presets(text: str, source: str = "<presets>") -> dict[str, EmotionPreset]:
    """Parse ``name = valence, arousal`` lines. ``#`` starts a comment."""
    table: dict[str, EmotionPreset] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            name, rhs = (part.strip() for part in line.split("=", 1))
            v_str, a_str = (part.strip() for part in rhs.split(","))
            v, a = float(v_str), float(a_str)
        except ValueError:
            raise ParseError(f"{source}: expected 'name = valence, arousal'", line=lineno) from None
        if not name.isidentifier():
            raise ParseError(f"{source}: bad preset name {name!r}", line=lineno)
        if name in table:
            raise ParseError(f"{source}: duplicate preset {name!r}", line=lineno)
        try:
            point = validate_va(v, a)
        except ValidationError as exc:
            raise ValidationError(f"{source}: {exc}", line=lineno, field=exc.field) from None
        table[name] = EmotionPreset(name, point)
    return table


def load_presets(path: str | Path | None = None) -> dict[str, EmotionPreset]:
    """Load the preset table from ``path``, or the shipped default."""
    if path is None:
        text = resources.files("affectshift").joinpath("data/presets.txt").read_text()
        return parse_presets(text, "presets.txt")
    path = Path(path)
    return parse_presets(path.read_text(), str(path))


_DEFAULT_PRESETS: dict[str, EmotionPreset] | None = None


def preset_emotion(name: str, table: Mapping[str, EmotionPreset] | None = None) -> VAPoint:
    global _DEFAULT_PRESETS
    if table is None:
        if _DEFAULT_PRESETS is None:
            _DEFAULT_PRESETS = load_presets()
        table = _DEFAULT_PRESETS
    try:
        return table[name].point
    except KeyError:
        raise UnknownEmotion(name, table.keys()) from None
