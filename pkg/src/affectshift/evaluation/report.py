"""Metric reports: per-item records plus recomputable aggregates.

On disk a report is JSON Lines: one ``meta`` line, one ``item`` line per
record, then one ``summary`` line holding the aggregates. Loading recomputes
the aggregates and rejects the file if they disagree.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..container import atomic_write_bytes
from ..errors import ParseError, ValidationError
from ..va import VAPoint
from .metrics import va_error

METRICS = ("a_err", "v_err", "similarity", "quality")
_AGG_RTOL = 1e-9


@dataclass(frozen=True)
class ItemRecord:
    va_in: VAPoint
    va_pred: VAPoint | None = None
    similarity: float | None = None
    quality: float | None = None

    def metric_values(self) -> dict:
        out = {"similarity": self.similarity, "quality": self.quality, "a_err": None, "v_err": None}
        if self.va_pred is not None:
            err = va_error(self.va_pred, self.va_in)
            out["a_err"], out["v_err"] = err.a_err, err.v_err
        return out

    def to_json(self) -> dict:
        return {
            "va_in": [self.va_in.valence, self.va_in.arousal],
            "va_pred": None if self.va_pred is None else [self.va_pred.valence, self.va_pred.arousal],
            "similarity": self.similarity,
            "quality": self.quality,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "ItemRecord":
        pred = rec.get("va_pred")
        return cls(
            VAPoint(*map(float, rec["va_in"])),
            None if pred is None else VAPoint(*map(float, pred)),
            rec.get("similarity"),
            rec.get("quality"),
        )


def aggregate(items) -> dict:
    """``{metric: {"mean", "std", "count"}}``; std uses the population (n) denominator."""
    out = {}
    for name in METRICS:
        vals = [r.metric_values()[name] for r in items]
        vals = np.array([v for v in vals if v is not None], dtype=np.float64)
        if vals.size:
            out[name] = {"mean": float(vals.mean()), "std": float(vals.std()), "count": int(vals.size)}
    return out


@dataclass
class MetricReport:
    items: list
    metadata: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)  # sweep-level scalars such as continuity

    @property
    def aggregates(self) -> dict:
        return aggregate(self.items)

    def save(self, path: str | Path) -> None:
        lines = [json.dumps({"type": "meta", "metadata": self.metadata})]
        lines += [json.dumps({"type": "item", **r.to_json()}) for r in self.items]
        lines.append(json.dumps({"type": "summary", "aggregates": self.aggregates, "extras": self.extras}))
        atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())

    @classmethod
    def load(cls, path: str | Path) -> "MetricReport":
        metadata, items, summary = None, [], None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    kind = rec["type"]
                except (ValueError, KeyError, TypeError):
                    raise ParseError(f"{path}: malformed report record", line=lineno) from None
                if kind == "meta":
                    metadata = rec["metadata"]
                elif kind == "item":
                    items.append(ItemRecord.from_json(rec))
                elif kind == "summary":
                    summary = rec
                else:
                    raise ParseError(f"{path}: unknown record type {kind!r}", line=lineno)
        if metadata is None or summary is None:
            raise ValidationError(f"{path}: report lacks a meta or summary record")
        report = cls(items, metadata, summary.get("extras", {}))
        _check_aggregates(summary["aggregates"], report.aggregates, path)
        return report


def _check_aggregates(stored: dict, recomputed: dict, path) -> None:
    if set(stored) != set(recomputed):
        raise ValidationError(f"{path}: summary metrics {sorted(stored)} != item metrics {sorted(recomputed)}")
    for name, agg in recomputed.items():
        for key in ("mean", "std", "count"):
            a, b = stored[name].get(key), agg[key]
            if a is None or not math.isclose(a, b, rel_tol=_AGG_RTOL, abs_tol=1e-12):
                raise ValidationError(
                    f"{path}: stored {name}.{key}={a!r} disagrees with per-item records ({b!r})",
                    field=name,
                )


_COLUMNS = (("a_err", "A-Error"), ("v_err", "V-Error"), ("similarity", "Similarity"), ("quality", "Quality"))


def render_table(reports: dict[str, MetricReport]) -> str:
    """Plain-text table, one row per named report, cells ``mean ± std``."""
    header = ["Method"] + [title for _, title in _COLUMNS]
    rows = [header]
    for name, report in reports.items():
        agg = report.aggregates
        row = [name]
        for key, _ in _COLUMNS:
            row.append(f"{agg[key]['mean']:.3f} ± {agg[key]['std']:.3f}" if key in agg else "-")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    lines = [fmt(rows[0]), "  ".join("-" * w for w in widths)]
    lines += [fmt(r) for r in rows[1:]]
    return "\n".join(lines)
