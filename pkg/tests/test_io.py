import numpy as np
import pytest

from src.audio import Waveform
from src.io import (
    Checkpoint,
    CheckpointError,
    SchemaError,
    corpus_exists,
    load_corpus,
    load_json,
    load_waveform,
    load_wordpiece,
    read_checkpoint,
    save_corpus,
    save_waveform,
    save_wordpiece,
    validate_schema,
    write_checkpoint,
    write_json,
)


def test_validate_schema_lists_missing_fields():
    with pytest.raises(SchemaError, match="seed"):
        validate_schema({"name": "x"}, ["name", "seed"], "corpus.json")


def test_load_json_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_json(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(SchemaError):
        load_json(bad)
    write_json(tmp_path / "sub" / "ok.json", {"a": 1})
    assert load_json(tmp_path / "sub" / "ok.json") == {"a": 1}


def test_waveform_storage_is_float32(tmp_path):
    w = Waveform(np.linspace(-0.5, 0.5, 101), 8000)
    save_waveform(tmp_path / "w", w)
    back = load_waveform(tmp_path / "w")
    assert back.sample_rate == 8000
    np.testing.assert_allclose(back.samples, w.samples, atol=1e-7)
    (tmp_path / "w.f32").write_bytes(b"\x00" * 8)
    with pytest.raises(SchemaError):
        load_waveform(tmp_path / "w")


@pytest.mark.parametrize("name", ["mt_set", "st_set"])
def test_corpus_survives_a_save_load_cycle(tmp_path, corpora, name):
    corpus = corpora[name]
    save_corpus(corpus, tmp_path / name)
    assert corpus_exists(tmp_path / name)
    back = load_corpus(tmp_path / name)
    assert (back.name, back.task, back.seed, len(back)) == (corpus.name, corpus.task, corpus.seed, len(corpus))
    for a, b in zip(corpus.examples, back.examples):
        assert a.uid == b.uid and a.domain == b.domain
        if corpus.task == "MT":
            assert (a.source, a.target) == (b.source, b.target)
        else:
            assert (a.transcript, a.translation, a.provenance) == (b.transcript, b.translation, b.provenance)
            assert a.speaker == b.speaker
            np.testing.assert_allclose(a.waveform.samples, b.waveform.samples, atol=1e-7)


def test_wordpiece_file(tmp_path, wordpiece):
    save_wordpiece(wordpiece, tmp_path / "wp.txt")
    assert load_wordpiece(tmp_path / "wp.txt").vocabulary == wordpiece.vocabulary


def _checkpoint():
    rng = np.random.default_rng(0)
    params = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=(4,))}
    optimizer = {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "step": 5,
                 "m": {"a": np.ones((3, 2))}, "v": {"a": np.full((3, 2), 2.0)}}
    return Checkpoint(params=params, config={"task": "MT"}, fingerprint="abc", step=5, seed=3,
                      rng_state={"x": 1}, frozen=["b"], optimizer=optimizer)


def test_checkpoint_file_is_exact(tmp_path):
    ckpt = _checkpoint()
    back = read_checkpoint(write_checkpoint(ckpt, tmp_path / "m.ckpt"))
    for k, v in ckpt.params.items():
        np.testing.assert_array_equal(back.params[k], v)
    assert (back.step, back.seed, back.frozen, back.fingerprint) == (5, 3, ["b"], "abc")
    assert back.rng_state == {"x": 1}
    np.testing.assert_array_equal(back.optimizer["v"]["a"], np.full((3, 2), 2.0))
    assert back.optimizer["step"] == 5


def test_truncated_checkpoint_is_rejected(tmp_path):
    path = write_checkpoint(_checkpoint(), tmp_path / "m.ckpt")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        read_checkpoint(path)
    with pytest.raises(FileNotFoundError):
        read_checkpoint(tmp_path / "missing.ckpt")
