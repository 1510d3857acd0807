"""Command-line entry point.

Subcommands: train, sweep, eval, encode, rerun, demo-data, presets.
Exit codes: 0 success, 2 validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .config import config_to_dict, load_config, parse_config
from .dataset import (
    HashPromptEncoder,
    PairedSample,
    PlantedMapping,
    encode_dataset,
    load_dataset,
    split_train_val,
    write_dataset,
)
from .density import fit_kde
from .errors import AffectShiftError, ValidationError
from .evaluation.metrics import FeatureCosineSimilarity, PlantedVAPredictor, continuity_score, euclidean, require_port
from .evaluation.report import ItemRecord, MetricReport, render_table
from .evaluation.stats import kendall_tau_b
from .pipeline import (
    NullBackend,
    SweepSpec,
    load_external_backend,
    load_sweep,
    now_iso,
    read_manifest,
    run_sweep,
    verify_manifest_inputs,
    write_manifest,
)
from .training import DirectorySink, TrainConfig, TrainState, train
from .va import load_presets, preset_emotion, validate_va

log = logging.getLogger("affectshift")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


def make_encoder(seq_len: int, d_prompt: int, spec: str | None = None):
    if spec:
        import importlib

        mod, attr = spec.split(":", 1)
        return getattr(importlib.import_module(mod), attr)()
    return HashPromptEncoder(seq_len, d_prompt)


# --- train --------------------------------------------------------------------

def run_train(dataset: str, out: str, cfg: TrainConfig, cache_dir: str | None = None,
              val_fraction: float = 0.05, resume: bool = False, encoder: str | None = None) -> Path:
    started = now_iso()
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load_dataset(dataset)
    enc = make_encoder(cfg.model.seq_len, cfg.model.d_prompt, encoder)
    encoded = encode_dataset(samples, enc, cache_dir or out_dir / "feature_cache")
    train_set, val_set = split_train_val(encoded, cfg.seed, val_fraction)
    if not train_set:
        raise ValidationError(f"{dataset}: no training samples")
    density = fit_kde([s.va for s in train_set], cfg.loss.min_density)
    density.save(out_dir / "density.kde")
    state = None
    if resume and (out_dir / "state.ckpt").exists():
        state = TrainState.load(out_dir / "state.ckpt", cfg)
        log.info("resuming from step %d", state.step)
    train(cfg, train_set, density if cfg.use_density else None, DirectorySink(out_dir), val_set or None, state)
    write_manifest(
        out_dir, "train",
        {"config": config_to_dict(cfg), "val_fraction": val_fraction, "encoder": encoder,
         "encoder_identity": enc.identity},
        {"dataset": dataset}, started,
    )
    return out_dir / "final.ckpt"


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    overrides = {k: v for k, v in {
        "seed": args.seed, "epochs": args.epochs, "max_steps": args.max_steps,
        "batch_size": args.batch_size, "learning_rate": args.lr,
    }.items() if v is not None}
    if args.no_density:
        overrides["use_density"] = False
    cfg = dataclasses.replace(cfg, **overrides)
    if args.alpha is not None:
        cfg = dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss, alpha=args.alpha))
    ckpt = run_train(args.dataset, args.out, cfg, args.cache_dir, args.val_fraction, args.resume, args.encoder)
    print(f"wrote {ckpt}")
    return EXIT_OK


# --- sweep --------------------------------------------------------------------

def run_sweep_command(checkpoint: str, spec: SweepSpec, out: str, backend: str = "null",
                      seed: int = 0, encoder: str | None = None) -> Path:
    started = now_iso()
    model, config = load_checkpoint(checkpoint)
    model.eval()
    enc = make_encoder(config.seq_len, config.d_prompt, encoder)
    neutral = np.asarray(enc.encode(spec.prompt))
    be = NullBackend() if backend == "null" else load_external_backend()
    entries = run_sweep(model, neutral, spec, be, out, seed)
    write_manifest(
        out, "sweep",
        {"spec": dataclasses.asdict(spec), "backend": backend, "seed": seed, "encoder": encoder,
         "encoder_identity": enc.identity},
        {"checkpoint": checkpoint}, started,
    )
    print(f"wrote {len(entries)} points to {out}")
    return Path(out)


def cmd_sweep(args) -> int:
    if args.emotion:
        p = preset_emotion(args.emotion, load_presets(args.presets))
        spec = SweepSpec(args.prompt, "valence", p.valence, p.valence, 1.0, p.arousal)
    else:
        spec = SweepSpec(args.prompt, args.axis, args.start, args.stop, args.step, args.fixed)
    run_sweep_command(args.checkpoint, spec, args.out, args.backend, args.seed, args.encoder)
    return EXIT_OK


# --- eval ---------------------------------------------------------------------

METRIC_CHOICES = ("va", "continuity", "similarity", "quality", "tau")


def evaluate_sweep(sweep_dir: str, metrics, planted: PlantedMapping | None = None,
                   similarity=FeatureCosineSimilarity(), quality=None) -> MetricReport:
    index, neutral, conds = load_sweep(sweep_dir)
    points = index["points"]
    predictor = None
    if "va" in metrics or "tau" in metrics:
        predictor = PlantedVAPredictor(planted) if planted is not None else None
        require_port(predictor, "va")
    if "similarity" in metrics:
        require_port(similarity, "similarity")
    if "quality" in metrics:
        require_port(quality, "quality")
    items = []
    for entry, cond in zip(points, conds):
        va_in = validate_va(entry["valence"], entry["arousal"])
        residual = cond.astype(np.float64) - neutral
        items.append(ItemRecord(
            va_in,
            predictor.predict(residual) if predictor is not None else None,
            similarity.score(cond, neutral) if "similarity" in metrics else None,
            quality.score(cond) if "quality" in metrics else None,
        ))
    extras = {}
    if "continuity" in metrics and len(conds) >= 2:
        extras["continuity"] = continuity_score(euclidean, conds)
    if "tau" in metrics:
        axis = index["spec"]["axis"]
        key = "arousal" if axis == "arousal" else "valence"
        intended = [getattr(r.va_in, key) for r in items]
        predicted = [getattr(r.va_pred, key) for r in items]
        extras["kendall_tau_b"] = kendall_tau_b(predicted, intended)
    meta = {"sweep": str(sweep_dir), "spec": index["spec"], "backend": index["backend"],
            "predictor": getattr(predictor, "identity", None)}
    return MetricReport(items, meta, extras)


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = set(metrics) - set(METRIC_CHOICES)
    if bad:
        raise ValidationError(f"unknown metrics {sorted(bad)}; choose from {METRIC_CHOICES}")
    planted = None
    if args.planted_scale is not None:
        index, neutral, _ = load_sweep(args.sweep)
        planted = PlantedMapping(neutral.shape[0], neutral.shape[1], args.planted_scale)
    report = evaluate_sweep(args.sweep, metrics, planted)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.jsonl")
    table = render_table({Path(args.sweep).name: report})
    if report.extras:
        table += "\n" + "\n".join(f"{k}: {v:.6g}" for k, v in report.extras.items())
    (out / "table.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


# --- encode / rerun / demo data ------------------------------------------------

def cmd_encode(args) -> int:
    cfg = load_config(args.config)
    samples = load_dataset(args.dataset)
    enc = make_encoder(cfg.model.seq_len, cfg.model.d_prompt, args.encoder)
    stats: dict = {}
    encoded = encode_dataset(samples, enc, args.cache_dir, stats)
    print(json.dumps({"samples": len(encoded), "encoder": enc.identity, **stats}))
    return EXIT_OK


def cmd_rerun(args) -> int:
    manifest = read_manifest(args.manifest)
    verify_manifest_inputs(manifest)
    cfg_block = manifest["config"]
    if manifest["command"] == "train":
        cfg = parse_config(cfg_block["config"])
        run_train(manifest["inputs"]["dataset"]["path"], args.out, cfg,
                  val_fraction=cfg_block["val_fraction"], encoder=cfg_block.get("encoder"))
    elif manifest["command"] == "sweep":
        spec = SweepSpec(**cfg_block["spec"])
        run_sweep_command(manifest["inputs"]["checkpoint"]["path"], spec, args.out,
                          cfg_block["backend"], cfg_block["seed"], cfg_block.get("encoder"))
    else:
        raise ValidationError(f"cannot re-run command {manifest['command']!r}")
    return EXIT_OK


_OBJECTS = ["a lighthouse on a cliff", "a child in a park", "an old street market", "a forest path",
            "a cat on a windowsill", "a city skyline", "a boat on a lake", "a kitchen table"]
_MOODS = {  # (valence sign, arousal sign) -> descriptive phrase
    (1, 1): "bright saturated colors, vivid dynamic light, joyful energy",
    (1, -1): "soft warm pastel light, calm gentle textures, peaceful",
    (-1, 1): "harsh red light, jagged shadows, tense and threatening",
    (-1, -1): "muted grey tones, dim overcast light, lonely and somber",
}


def demo_samples(seed: int, count: int) -> list[PairedSample]:
    """Template-built prompt pairs with V-A drawn from the toy mixture."""
    from .dataset import sample_mixture

    rng = np.random.default_rng(seed)
    va = sample_mixture(rng, count)
    out = []
    for i, (v, a) in enumerate(va):
        obj = _OBJECTS[rng.integers(len(_OBJECTS))]
        mood = _MOODS[(1 if v >= 0 else -1, 1 if a >= 0 else -1)]
        out.append(PairedSample(f"a photo of {obj}", f"a photo of {obj}, {mood}",
                                validate_va(round(float(v), 3), round(float(a), 3)), f"demo-{seed}-{i}"))
    return out


def cmd_demo_data(args) -> int:
    write_dataset(demo_samples(args.seed, args.count), args.out)
    print(f"wrote {args.count} samples to {args.out}")
    return EXIT_OK


def cmd_presets(args) -> int:
    for name, preset in load_presets(args.presets).items():
        print(f"{name:12s} v={preset.point.valence:+.2f} a={preset.point.arousal:+.2f}")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="affectshift", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit the KDE and train the embedding network")
    t.add_argument("--config")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--no-density", action="store_true", help="train without density weighting")
    t.add_argument("--val-fraction", type=float, default=0.05)
    t.add_argument("--cache-dir")
    t.add_argument("--encoder", help="module:factory of a prompt encoder (default: hash toy encoder)")
    t.add_argument("--resume", action="store_true", help="continue from <out>/state.ckpt if present")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="condition a backend over a V-A grid")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--prompt", default="")
    s.add_argument("--axis", choices=("valence", "arousal", "both-grid"), default="valence")
    s.add_argument("--start", type=float, default=-3.0)
    s.add_argument("--stop", type=float, default=3.0)
    s.add_argument("--step", type=float, default=0.2)
    s.add_argument("--fixed", type=float, default=0.0, help="value of the other axis in a one-axis sweep")
    s.add_argument("--emotion", help="single point from the preset table")
    s.add_argument("--presets")
    s.add_argument("--backend", choices=("null", "external"), default="null")
    s.add_argument("--encoder")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eval", help="score a sweep directory")
    e.add_argument("--sweep", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--metrics", default="continuity,similarity",
                   help=f"comma list from {','.join(METRIC_CHOICES)}")
    e.add_argument("--planted-scale", type=float,
                   help="enable the planted-mapping V-A predictor (toy checkpoints only)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("encode", help="encode a dataset into the feature cache")
    c.add_argument("--config")
    c.add_argument("--dataset", required=True)
    c.add_argument("--cache-dir", required=True)
    c.add_argument("--encoder")
    c.set_defaults(func=cmd_encode)

    r = sub.add_parser("rerun", help="repeat a train or sweep run from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rerun)

    d = sub.add_parser("demo-data", help="write a small template-built dataset")
    d.add_argument("--out", required=True)
    d.add_argument("--count", type=int, default=200)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_demo_data)

    pr = sub.add_parser("presets", help="list discrete emotion presets")
    pr.add_argument("--presets")
    pr.set_defaults(func=cmd_presets)
    return p


def _report_error(exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for key in ("line", "field"):
        if getattr(exc, key, None) is not None:
            payload[key] = getattr(exc, key)
    print(json.dumps(payload), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        _report_error(exc)
        return EXIT_VALIDATION
    except (AffectShiftError, OSError) as exc:
        _report_error(exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
