import functools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.text import (
    BOS,
    EOS,
    PAD,
    RESERVED,
    UNK,
    MetricError,
    WordpieceError,
    WordpieceModel,
    bleu,
    corpus_wer,
    edit_distance,
    ngram_counts,
    normalize_text,
    train_wordpiece,
    wer,
)

LINES = ["i see the red box.", "we have two dogs here.", "yo ver la caja roja.", "do you want a cat?"]


def test_reserved_ids():
    assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)
    model = train_wordpiece(LINES, 50)
    assert model.vocabulary[:4] == RESERVED
    with pytest.raises(WordpieceError):
        WordpieceModel(("a", "b", "c", "d"))


def test_training_is_deterministic_and_bounded():
    a = train_wordpiece(LINES, 45)
    b = train_wordpiece(LINES, 45)
    assert a.vocabulary == b.vocabulary
    assert len(a) <= 45


def test_vocab_smaller_than_alphabet_raises():
    with pytest.raises(WordpieceError):
        train_wordpiece(LINES, 8)
    with pytest.raises(WordpieceError):
        train_wordpiece([], 40)


def test_round_trip_on_training_text():
    model = train_wordpiece(LINES, 60)
    for line in LINES:
        ids = model.encode(line)
        assert UNK not in ids
        assert model.decode(ids) == line


def test_unknown_characters_map_to_unk():
    model = train_wordpiece(LINES, 40)
    ids = model.encode("xz")
    assert UNK in ids


def test_decode_skips_control_tokens_and_checks_range():
    model = train_wordpiece(LINES, 40)
    ids = model.encode("the box")
    assert model.decode([BOS] + ids + [EOS, PAD]) == "the box"
    with pytest.raises(WordpieceError):
        model.decode([len(model) + 5])


def test_wer_examples():
    assert wer("the cat sat", "the cat sat") == 0.0
    assert wer("the cat", "the cat sat") == pytest.approx(1 / 3)
    assert wer("a b c d", "x") == 4.0
    assert wer("The cat.", "the cat", normalization="lower_nopunct") == 0.0
    with pytest.raises(MetricError):
        wer("a", "")


def test_corpus_wer_pools_edits():
    assert corpus_wer(["a b", "c"], ["a b", "c d e"]) == pytest.approx(2 / 5)


def test_normalization_modes():
    assert normalize_text("Hey, you?", "lower_nopunct") == ["hey", "you"]
    assert normalize_text("Hey, you?") == ["Hey,", "you?"]
    with pytest.raises(MetricError):
        normalize_text("x", "stemmed")


@settings(max_examples=50)
@given(st.lists(st.sampled_from("abcd"), max_size=8), st.lists(st.sampled_from("abcd"), max_size=8))
def test_edit_distance_is_symmetric_and_bounded(a, b):
    d = edit_distance(a, b)
    assert d == edit_distance(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))


def test_bleu_identity_is_100():
    refs = ["el gato rojo esta aqui .", "yo tengo numero dos perros ."]
    assert bleu(refs, refs) == pytest.approx(100.0)


def test_bleu_zero_without_four_gram_match():
    assert bleu(["a b c"], ["a b c d e"]) == 0.0


def test_bleu_brevity_penalty():
    ref = ["a b c d e f g h"]
    hyp = ["a b c d e f"]
    assert bleu(hyp, ref) == pytest.approx(100.0 * math.exp(1 - 8 / 6))


def test_bleu_validates_input():
    with pytest.raises(MetricError):
        bleu(["a"], ["a", "b"])
    with pytest.raises(MetricError):
        bleu([], [])


def test_single_merge_on_a_repeated_character():
    model = train_wordpiece(["aaaa"], 6)
    assert {"a", "aa"} <= set(model.vocabulary)


def test_longest_match_and_empty_input():
    model = WordpieceModel(RESERVED + ("a", "b", "ab"))
    assert model.encode("ab") == [6]
    assert model.encode("") == [] and model.decode([]) == ""
    with pytest.raises(WordpieceError):
        model.decode([len(model)])


def test_hand_computed_metrics():
    # no 4-gram in a three-word hypothesis, and nothing is smoothed
    assert bleu(["the cat sat"], ["the cat sat down"]) == 0.0
    assert wer("a b c", "a x c") == pytest.approx(1 / 3)
    assert wer("", "a b c d") == 1.0


WORDS = st.lists(st.sampled_from(["a", "b", "c"]), max_size=6)


@functools.lru_cache(maxsize=None)
def _alignment_cost(hyp, ref):
    # top-down over every monotone alignment
    if not hyp:
        return len(ref)
    if not ref:
        return len(hyp)
    return min(_alignment_cost(hyp[1:], ref) + 1,
               _alignment_cost(hyp, ref[1:]) + 1,
               _alignment_cost(hyp[1:], ref[1:]) + (hyp[0] != ref[0]))


@settings(max_examples=1000, deadline=None)
@given(WORDS, WORDS.filter(bool))
def test_wer_matches_exhaustive_alignment(hyp, ref):
    assert wer(" ".join(hyp), " ".join(ref)) == pytest.approx(_alignment_cost(tuple(hyp), tuple(ref)) / len(ref))


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.sampled_from("ab"), max_size=10), st.integers(1, 5))
def test_ngram_counts_match_a_sliding_window(tokens, n):
    window = {}
    for start in range(len(tokens)):
        if start + n <= len(tokens):
            gram = tuple(tokens[start:start + n])
            window[gram] = window.get(gram, 0) + 1
    assert dict(ngram_counts(tokens, n)) == window


def _plain_bleu(hyps, refs):
    matched = [0, 0, 0, 0]
    total = [0, 0, 0, 0]
    for h, r in zip(hyps, refs):
        for n in range(1, 5):
            pool = [tuple(r[i:i + n]) for i in range(len(r) - n + 1)]
            for i in range(len(h) - n + 1):
                total[n - 1] += 1
                if tuple(h[i:i + n]) in pool:
                    pool.remove(tuple(h[i:i + n]))
                    matched[n - 1] += 1
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    if hyp_len == 0 or 0 in matched:
        return 0.0
    precision = 1.0
    for m, t in zip(matched, total):
        precision *= m / t
    penalty = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return 100.0 * penalty * precision ** 0.25


SENTENCE = st.lists(st.sampled_from(["a", "b", "c"]), max_size=8)


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.tuples(SENTENCE, SENTENCE.filter(bool)), min_size=1, max_size=3))
def test_bleu_matches_plain_counting(pairs):
    hyps = [h for h, _ in pairs]
    refs = [r for _, r in pairs]
    expected = _plain_bleu(hyps, refs)
    got = bleu([" ".join(h) for h in hyps], [" ".join(r) for r in refs])
    assert got == pytest.approx(expected, rel=1e-9, abs=1e-9)
