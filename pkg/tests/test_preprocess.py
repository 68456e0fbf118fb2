from dataclasses import replace

import numpy as np
import pytest

from src.audio import Waveform
from src.preprocess import RangeError, collate, pad_inputs, prep_corpus, stack_frames, validate_ranges
from src.text import BOS, EOS, PAD
from src.toyworld import Corpus


def test_stack_frames():
    frames = np.arange(14 * 2, dtype=float).reshape(14, 2)
    out = stack_frames(frames, 3)
    assert out.shape == (4, 6)
    np.testing.assert_array_equal(out[1], frames[3:6].reshape(-1))
    assert stack_frames(frames[:2], 3).shape == (1, 6)
    assert stack_frames(frames, 1) is frames


def test_frontend_targets_wrap_bos_eos(frontend, corpora):
    text = corpora["mt_set"].examples[0].target
    y = frontend.targets(text)
    assert y[0] == BOS and y[-1] == EOS
    assert frontend.detokenize(y) == text


def test_prep_corpus_views(prepared, frontend, corpora):
    assert prepared["MT"].input_kind == "text"
    assert prepared["ST"].input_kind == "speech"
    ex = prepared["ST"].examples[0]
    assert ex.inputs.shape[1] == frontend.feature_dim
    assert frontend.detokenize(ex.targets) == corpora["st_set"].examples[0].translation
    asr = prepared["ASR"].examples[0]
    assert frontend.detokenize(asr.targets) == corpora["asr_set"].examples[0].transcript


def test_text_corpora_cannot_feed_speech_views(corpora, frontend):
    with pytest.raises(RangeError):
        prep_corpus(corpora["mt_set"], frontend, "ST")
    with pytest.raises(RangeError):
        prep_corpus(corpora["asr_set"], frontend, "MT")
    with pytest.raises(ValueError):
        prep_corpus(corpora["st_set"], frontend, "TTS")


def test_out_of_range_waveform_is_caught(corpora):
    utt = corpora["st_set"].examples[0]
    loud = replace(utt, waveform=Waveform(utt.waveform.samples * 10.0, utt.waveform.sample_rate))
    with pytest.raises(RangeError):
        validate_ranges(Corpus("ST", [loud], "loud"))


def test_collate_shifts_targets(prepared):
    batch = collate(prepared["MT"].examples[:4], "text")
    assert batch.size == 4
    for i, ex in enumerate(prepared["MT"].examples[:4]):
        n = len(ex.targets) - 1
        np.testing.assert_array_equal(batch.decoder_inputs[i, :n], ex.targets[:-1])
        np.testing.assert_array_equal(batch.decoder_targets[i, :n], ex.targets[1:])
        assert np.all(batch.decoder_targets[i, n:] == PAD)
        assert batch.target_mask[i].sum() == n
        assert batch.input_mask[i].sum() == len(ex.inputs)


def test_pad_inputs_rejects_empty_sequences():
    with pytest.raises(RangeError):
        pad_inputs([np.zeros((0, 3)), np.zeros((2, 3))], "speech")
