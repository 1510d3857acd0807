import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from affectshift.cli import demo_samples, evaluate_sweep, main
from affectshift.config import dump_config, load_config, parse_config
from affectshift.dataset import HashPromptEncoder, ToyConfig, write_dataset
from affectshift.errors import MissingPort, ValidationError
from affectshift.model import EITConfig, build_model, randomize_params
from affectshift.pipeline import NullBackend, SweepSpec, load_sweep, pooled_embedding, run_sweep

TINY_YAML = """\
model:
  num_blocks: 1
  d_model: 8
  d_prompt: 16
  seq_len: 4
  num_heads: 2
  d_ffn: 16
  mlp_hidden: 8
train:
  batch_size: 8
  epochs: 2
  learning_rate: 1e-3
loss:
  alpha: 1.5
"""


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "cfg.yaml").write_text(TINY_YAML)
    write_dataset(demo_samples(0, 40), tmp_path / "data.jsonl")
    return tmp_path


@pytest.fixture(scope="module")
def tiny_model():
    cfg = EITConfig(num_blocks=1, d_model=8, d_prompt=16, seq_len=4, num_heads=2, d_ffn=16, mlp_hidden=8)
    model = build_model(cfg, seed=3)
    randomize_params(model, 5)
    return model.eval()


# --- sweep grid ----------------------------------------------------------------

def test_default_sweep_has_31_points():
    assert len(SweepSpec("x").points()) == 31
    assert len(SweepSpec("x", "both-grid", -1, 1, 0.5).points()) == 25


@given(st.integers(-30, 30), st.integers(0, 60), st.sampled_from([0.1, 0.2, 0.25, 0.5, 1.0]))
def test_sweep_count_formula(start_tenths, width_steps, step):
    start = start_tenths / 10
    stop = start + width_steps * step
    if stop > 3.0:
        return
    spec = SweepSpec("x", "arousal", start, stop, step)
    assert len(spec.points()) == width_steps + 1
    assert spec.axis_values()[-1] == pytest.approx(stop)


@pytest.mark.parametrize("kwargs", [
    {"step": 0.0}, {"step": -0.2}, {"step": 0.7}, {"start": 1.0, "stop": -1.0},
    {"stop": 3.5}, {"axis": "diagonal"}, {"fixed": 4.0},
])
def test_bad_sweep_specs(kwargs):
    with pytest.raises(ValidationError):
        SweepSpec("x", **kwargs)


def test_row_major_grid_order():
    pts = SweepSpec("x", "both-grid", 0, 1, 1).points()
    assert [(r, c) for r, c, _ in pts] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert pts[1][2].valence == 0 and pts[1][2].arousal == 1


def test_empty_prompt_sweep_is_deterministic(tmp_path, tiny_model):
    neutral = HashPromptEncoder(4, 16).encode("")
    spec = SweepSpec("", step=1.0)
    a = run_sweep(tiny_model, neutral, spec, NullBackend(), tmp_path / "a", seed=7)
    b = run_sweep(tiny_model, neutral, spec, NullBackend(), tmp_path / "b", seed=7)
    assert len(a) == 7
    assert [e["conditioning_sha256"] for e in a] == [e["conditioning_sha256"] for e in b]
    assert all(sha(tmp_path / "a" / e["image"]) == sha(tmp_path / "b" / e["image"]) for e in a)
    index, neutral_back, conds = load_sweep(tmp_path / "a")
    assert np.array_equal(neutral_back, neutral) and len(conds) == 7
    assert index["seed"] == 7


def test_backend_failure_is_reported(tmp_path, tiny_model):
    from affectshift.errors import BackendFailure

    class Broken:
        identity = "broken"

        def generate(self, conditioning, seed, info=None):
            raise RuntimeError("out of memory")

    with pytest.raises(BackendFailure, match="broken"):
        run_sweep(tiny_model, HashPromptEncoder(4, 16).encode("a"), SweepSpec("a", step=3.0), Broken(), tmp_path)


def test_pooled_embedding_is_token_mean():
    x = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(pooled_embedding(x), x.mean(axis=0))


# --- evaluation of a sweep -------------------------------------------------------

def planted_sweep(tmp_path, axis="valence"):
    """A sweep whose conditionings are exactly neutral + planted(p)."""
    planted = ToyConfig().planted()
    neutral = HashPromptEncoder(4, 16).encode("a cat")
    spec = SweepSpec("a cat", axis, -3, 3, 0.5, fixed=1.0)
    d = tmp_path / "planted"
    d.mkdir()
    points = []
    for k, (r, c, p) in enumerate(spec.points()):
        name = f"cond_{k:04d}.npy"
        np.save(d / name, (neutral + planted(p)).astype(np.float32))
        points.append({"index": k, "row": r, "col": c, "valence": p.valence, "arousal": p.arousal,
                       "conditioning": name, "image": None})
    np.save(d / "neutral.npy", neutral)
    spec_dict = {"prompt": spec.prompt, "axis": axis, "start": -3, "stop": 3, "step": 0.5, "fixed": 1.0}
    (d / "index.json").write_text(json.dumps({"spec": spec_dict, "seed": 0, "backend": "none", "points": points}))
    return d, planted


@pytest.mark.parametrize("axis", ["valence", "arousal"])
def test_eval_tau_with_planted_predictor(tmp_path, axis):
    d, planted = planted_sweep(tmp_path, axis)
    report = evaluate_sweep(d, ["va", "tau", "continuity"], planted)
    assert report.extras["kendall_tau_b"] == 1.0
    assert np.isfinite(report.extras["continuity"])
    assert report.aggregates["a_err"]["mean"] < 0.05 and report.aggregates["v_err"]["mean"] < 0.05


def test_eval_missing_ports(tmp_path):
    d, _ = planted_sweep(tmp_path)
    with pytest.raises(MissingPort, match="quality"):
        evaluate_sweep(d, ["quality"])
    with pytest.raises(MissingPort, match="va"):
        evaluate_sweep(d, ["tau"])


# --- config files ----------------------------------------------------------------

def test_config_yaml_parsing(tmp_path):
    (tmp_path / "c.yaml").write_text(TINY_YAML)
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.model.d_model == 8 and cfg.model.num_blocks == 1
    assert cfg.learning_rate == 1e-3 and isinstance(cfg.learning_rate, float)
    assert cfg.batch_size == 8 and cfg.loss.alpha == 1.5
    (tmp_path / "round.yaml").write_text(dump_config(cfg))
    assert load_config(tmp_path / "round.yaml") == cfg


@pytest.mark.parametrize("data", [
    {"model": {"width": 3}}, {"optimizer": {}}, {"train": {"learning_rate": "fast"}}, [1, 2],
])
def test_config_rejects_bad_input(data):
    with pytest.raises(ValidationError):
        parse_config(data)


# --- command line ----------------------------------------------------------------

def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_train_sweep_eval_rerun(workdir, capsys):
    run = workdir / "run"
    code, _, err = run_cli(capsys, "train", "--config", workdir / "cfg.yaml", "--dataset", workdir / "data.jsonl",
                           "--out", run, "--max-steps", 6)
    assert code == 0, err
    for name in ("final.ckpt", "best.ckpt", "state.ckpt", "metrics.jsonl", "manifest.json", "density.kde"):
        assert (run / name).exists(), name
    records = [json.loads(l) for l in (run / "metrics.jsonl").read_text().splitlines()]
    assert {"step", "epoch", "train_loss", "val_loss", "mean_density_weight", "wall_time"} <= set(records[0])

    code, _, err = run_cli(capsys, "rerun", run / "manifest.json", "--out", workdir / "again")
    assert code == 0, err
    assert sha(run / "final.ckpt") == sha(workdir / "again" / "final.ckpt")

    sweep = workdir / "sweep"
    code, out, err = run_cli(capsys, "sweep", "--checkpoint", run / "final.ckpt", "--prompt", "a forest path",
                             "--out", sweep)
    assert code == 0, err and "31 points" in out
    code, _, err = run_cli(capsys, "rerun", sweep, "--out", workdir / "sweep2")
    assert code == 0, err
    first = json.loads((sweep / "index.json").read_text())["points"]
    second = json.loads((workdir / "sweep2" / "index.json").read_text())["points"]
    assert [p["conditioning_sha256"] for p in first] == [p["conditioning_sha256"] for p in second]

    code, out, err = run_cli(capsys, "eval", "--sweep", sweep, "--out", workdir / "ev",
                             "--metrics", "continuity,similarity")
    assert code == 0, err
    assert "Similarity" in out and (workdir / "ev" / "report.jsonl").exists()
    code, _, err = run_cli(capsys, "eval", "--sweep", sweep, "--out", workdir / "ev", "--metrics", "quality")
    assert code == 3 and json.loads(err)["error"] == "MissingPort" and "quality" in err


def test_rerun_refuses_changed_inputs(workdir, capsys):
    run = workdir / "run"
    assert run_cli(capsys, "train", "--config", workdir / "cfg.yaml", "--dataset", workdir / "data.jsonl",
                   "--out", run, "--max-steps", 2)[0] == 0
    with open(workdir / "data.jsonl", "a") as fh:
        fh.write("\n")
    code, _, err = run_cli(capsys, "rerun", run, "--out", workdir / "again")
    assert code == 2 and "changed" in err


def test_out_of_range_va_reports_line(workdir, capsys):
    lines = (workdir / "data.jsonl").read_text().splitlines()
    bad = json.loads(lines[2])
    bad["valence"] = 3.5
    lines[2] = json.dumps(bad)
    (workdir / "bad.jsonl").write_text("\n".join(lines) + "\n")
    code, _, err = run_cli(capsys, "train", "--config", workdir / "cfg.yaml", "--dataset", workdir / "bad.jsonl",
                           "--out", workdir / "run")
    payload = json.loads(err)
    assert code == 2 and payload["line"] == 3 and payload["error"] == "OutOfRange"


def test_encode_reports_cache_use(workdir, capsys):
    args = ("encode", "--config", workdir / "cfg.yaml", "--dataset", workdir / "data.jsonl",
            "--cache-dir", workdir / "cache")
    code, out, _ = run_cli(capsys, *args)
    first = json.loads(out)
    assert code == 0 and first["samples"] == 40 and first["encoder_calls"] > 0
    code, out, _ = run_cli(capsys, *args)
    assert json.loads(out)["encoder_calls"] == 0


def test_presets_override(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "presets")
    assert code == 0 and "sadness" in out
    (tmp_path / "p.txt").write_text("# custom\nserene = 1.5, -2.5\n")
    code, out, _ = run_cli(capsys, "presets", "--presets", tmp_path / "p.txt")
    assert code == 0 and "serene" in out and "sadness" not in out


def test_sweep_unknown_emotion(workdir, capsys, tiny_model):
    from affectshift.checkpoint import save_checkpoint

    save_checkpoint(tiny_model, EITConfig(num_blocks=1, d_model=8, d_prompt=16, seq_len=4, num_heads=2, d_ffn=16,
                                          mlp_hidden=8), workdir / "m.ckpt")
    code, _, err = run_cli(capsys, "sweep", "--checkpoint", workdir / "m.ckpt", "--emotion", "joy",
                           "--out", workdir / "s")
    assert code == 2 and json.loads(err)["error"] == "UnknownEmotion"
    code, out, _ = run_cli(capsys, "sweep", "--checkpoint", workdir / "m.ckpt", "--emotion", "anger",
                           "--out", workdir / "s")
    assert code == 0 and "1 points" in out
