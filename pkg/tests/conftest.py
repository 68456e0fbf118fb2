import matplotlib

matplotlib.use("Agg")

import numpy as np
import pytest

from src.models import ModelConfig, Seq2Seq
from src.preprocess import Frontend, collate, prep_corpus
from src.text import train_wordpiece
from src.toyworld import ScaleConfig, build_corpora, corpus_texts

TINY_SCALE = ScaleConfig(mt_size=40, asr_size=16, st_size=8, eval_in_size=6, eval_out_size=6)


@pytest.fixture(scope="session")
def tiny_scale():
    return TINY_SCALE


@pytest.fixture(scope="session")
def corpora():
    return build_corpora(TINY_SCALE, seed=7)


@pytest.fixture(scope="session")
def wordpiece(corpora):
    mt = corpora["mt_set"]
    lines = corpus_texts(mt) + [ex.target for ex in mt.examples] + corpus_texts(corpora["asr_set"])
    return train_wordpiece(lines, 60)


@pytest.fixture(scope="session")
def frontend(wordpiece):
    return Frontend(wordpiece)


def tiny_config(task, vocab_size, input_dim, **overrides):
    cfg = dict(task=task, vocab_size=vocab_size, input_dim=input_dim, embed_dim=8, encoder_layers=1,
               encoder_cell=4, decoder_layers=1, decoder_cell=8, attention_heads=2, attention_dim=8)
    cfg.update(overrides)
    return ModelConfig(**cfg)


@pytest.fixture
def make_model(frontend):
    def _make(task, seed=0, **overrides):
        cfg = tiny_config(task, frontend.vocab_size, frontend.feature_dim, **overrides)
        return Seq2Seq(cfg, rng=np.random.default_rng(seed))

    return _make


@pytest.fixture(scope="session")
def prepared(corpora, frontend):
    return {
        "ASR": prep_corpus(corpora["asr_set"], frontend, "ASR"),
        "MT": prep_corpus(corpora["mt_set"], frontend, "MT"),
        "ST": prep_corpus(corpora["st_set"], frontend, "ST"),
    }


@pytest.fixture
def small_batch(prepared):
    def _batch(view, n=3):
        pc = prepared[view]
        return collate(pc.examples[:n], pc.input_kind)

    return _batch
