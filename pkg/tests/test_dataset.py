import json

import numpy as np
import pytest

from affectshift.dataset import (
    HashPromptEncoder,
    PairedSample,
    PromptEncoderPort,
    ToyConfig,
    encode_dataset,
    load_dataset,
    split_train_val,
    synth_toy_dataset,
    write_dataset,
)
from affectshift.density import density_at, fit_kde
from affectshift.errors import CacheCorruption, EncoderFailure, ParseError, ValidationError
from affectshift.va import VAPoint


def record(**kw):
    base = {"neutral_prompt": "a dog", "emotional_prompt": "a joyful dog", "valence": 1.0, "arousal": 0.5}
    base.update(kw)
    return json.dumps(base)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


def test_load_valid_in_order(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [record(source_id="a"), record(neutral_prompt="a cat", valence=-2)])
    samples = load_dataset(p)
    assert [s.source_id for s in samples] == ["a", None]
    assert samples[1].neutral_prompt == "a cat" and samples[1].va == VAPoint(-2.0, 0.5)


def test_out_of_range_reports_line_and_field(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [record(), record(valence=4.2)])
    with pytest.raises(ValidationError) as exc:
        load_dataset(p)
    assert exc.value.line == 2 and exc.value.field == "valence"


@pytest.mark.parametrize("bad,field", [
    (record(neutral_prompt="   "), "neutral_prompt"),
    (record(arousal="high"), "arousal"),
    (record(arousal=True), "arousal"),
    (json.dumps({"neutral_prompt": "x", "valence": 0, "arousal": 0}), "emotional_prompt"),
    (record(source_id=7), "source_id"),
])
def test_field_validation(tmp_path, bad, field):
    p = write_lines(tmp_path / "d.jsonl", [bad])
    with pytest.raises(ValidationError) as exc:
        load_dataset(p)
    assert exc.value.field == field and exc.value.line == 1


def test_parse_error_has_line(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [record(), "{not json"])
    with pytest.raises(ParseError) as exc:
        load_dataset(p)
    assert exc.value.line == 2


def test_empty_file(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert load_dataset(tmp_path / "e.jsonl") == []


def test_write_round_trip(tmp_path):
    samples = [PairedSample("a", "b", VAPoint(0.25, -1.0), "x"), PairedSample("c", "d é", VAPoint(3.0, 3.0))]
    write_dataset(samples, tmp_path / "d.jsonl")
    assert load_dataset(tmp_path / "d.jsonl") == samples


class CountingEncoder(HashPromptEncoder):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.calls = []

    def encode(self, text):
        self.calls.append(text)
        return super().encode(text)


def test_hash_encoder_contract():
    enc = HashPromptEncoder(6, 5)
    assert isinstance(enc, PromptEncoderPort)
    a = enc.encode("A red house")
    assert a.shape == (6, 5) and a.dtype == np.float32
    assert np.array_equal(a, enc.encode("a red  house!"))  # case/punctuation-insensitive words
    assert not np.array_equal(a, enc.encode("a blue house"))
    assert enc.encode("").shape == (6, 5)


def test_cache_telemetry(tmp_path):
    samples = [
        PairedSample("a house", "a gloomy house", VAPoint(-1, -1)),
        PairedSample("a house", "a cheerful house", VAPoint(2, 1)),
        PairedSample("a tree", "a calm tree", VAPoint(1, -2)),
    ]
    enc = CountingEncoder(4, 8)
    stats = {}
    first = encode_dataset(samples, enc, tmp_path, stats)
    assert enc.calls.count("a house") == 1
    assert stats["encoder_calls"] == 5
    enc.calls.clear()
    second = encode_dataset(samples, enc, tmp_path, stats)
    assert enc.calls == [] and stats["encoder_calls"] == 0 and stats["cache_hits"] == 5
    for x, y in zip(first, second):
        assert np.array_equal(x.f_n, y.f_n) and np.array_equal(x.f_e, y.f_e) and x.va == y.va
        assert x.f_n.shape == (enc.seq_len, enc.d_prompt)


def test_cache_keyed_by_encoder_identity(tmp_path):
    samples = [PairedSample("a house", "a gloomy house", VAPoint(-1, -1))]
    encode_dataset(samples, HashPromptEncoder(4, 8), tmp_path)
    out = encode_dataset(samples, HashPromptEncoder(4, 6), tmp_path)
    assert out[0].f_n.shape == (4, 6)


def test_cache_corruption(tmp_path):
    samples = [PairedSample("a house", "a gloomy house", VAPoint(-1, -1))]
    enc = HashPromptEncoder(4, 8)
    encode_dataset(samples, enc, tmp_path)
    entry = next((tmp_path).rglob("*.npy"))
    np.save(entry, np.zeros((3, 3), dtype=np.float32))
    with pytest.raises(CacheCorruption):
        encode_dataset(samples, enc, tmp_path)
    entry.write_bytes(b"garbage")
    with pytest.raises(CacheCorruption):
        encode_dataset(samples, enc, tmp_path)


def test_encoder_failure_is_wrapped(tmp_path):
    class Broken(HashPromptEncoder):
        def encode(self, text):
            raise RuntimeError("model offline")

    with pytest.raises(EncoderFailure, match="model offline"):
        encode_dataset([PairedSample("a", "b", VAPoint(0, 0))], Broken(2, 2), tmp_path)


def test_split_is_deterministic_and_disjoint():
    samples = [PairedSample("a", "b", VAPoint(0, 0), f"id{i}") for i in range(400)]
    tr1, va1 = split_train_val(samples, seed=3)
    tr2, va2 = split_train_val(samples, seed=3)
    assert tr1 == tr2 and va1 == va2
    assert len(tr1) + len(va1) == 400
    assert 5 <= len(va1) <= 40
    assert {s.source_id for s in tr1}.isdisjoint({s.source_id for s in va1})


def test_toy_dataset_deterministic_and_planted():
    cfg = ToyConfig()
    a = synth_toy_dataset(7, 50, cfg)
    b = synth_toy_dataset(7, 50, cfg)
    planted = cfg.planted()
    for x, y in zip(a, b):
        assert np.array_equal(x.f_n, y.f_n) and np.array_equal(x.f_e, y.f_e) and x.va == y.va
        assert np.array_equal(x.f_e - x.f_n, planted(x.va))
        assert x.f_n.shape == (cfg.seq_len, cfg.d_prompt)
    c = synth_toy_dataset(8, 50, cfg)
    assert not np.array_equal(a[0].f_n, c[0].f_n)


def test_toy_mixture_is_unbalanced():
    data = synth_toy_dataset(7, 1000)
    kde = fit_kde([s.va for s in data])
    dense_mode, sparse_mode = ToyConfig().mixture[0].mean, ToyConfig().mixture[1].mean
    ratio = density_at(kde, VAPoint(*dense_mode)) / density_at(kde, VAPoint(*sparse_mode))
    assert ratio > 3  # measured 4.89 for seed 7


def test_toy_count_validation():
    with pytest.raises(ValidationError):
        synth_toy_dataset(0, 0)
