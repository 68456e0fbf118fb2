"""
Shared subword tokenizer (greedy pair merges) and the BLEU / WER metrics.

Word boundaries are carried by the leading space of every non-initial word, so
decoding is plain concatenation and decode(encode(s)) == s for known characters.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
BOUNDARY = "leading_space"

_CHUNK = re.compile(r"\s*\S+|\s+")
_PUNCT = re.compile(r"[^\w\s]")


class WordpieceError(ValueError):
    """Raised for invalid tokenizer training requests or undecodable ids."""


class MetricError(ValueError):
    """Raised when a metric is asked to score malformed input."""


@dataclass(frozen=True)
class WordpieceModel:
    vocabulary: Tuple[str, ...]
    boundary: str = BOUNDARY
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)
    _max_len: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.vocabulary[:4]) != RESERVED:
            raise WordpieceError(f"reserved tokens must occupy ids 0-3, got {self.vocabulary[:4]}")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise WordpieceError("vocabulary entries must be unique")
        object.__setattr__(self, "_index", {tok: i for i, tok in enumerate(self.vocabulary)})
        object.__setattr__(self, "_max_len", max(len(t) for t in self.vocabulary[4:]) if len(self.vocabulary) > 4 else 1)

    def __len__(self) -> int:
        return len(self.vocabulary)

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK)

    def encode(self, text: str) -> List[int]:
        return wp_encode(self, text)

    def decode(self, ids: Iterable[int]) -> str:
        return wp_decode(self, ids)


def _chunks(text: str) -> List[str]:
    return _CHUNK.findall(text)


def train_wordpiece(corpus: Iterable[str], vocab_size: int) -> WordpieceModel:
    """
    Greedy pair-merge training over the lines of both languages.

    Each step merges the most frequent adjacent symbol pair (ties broken
    lexicographically) until vocab_size is reached or no pair occurs twice.
    """
    lines = [line for line in corpus]
    if not lines or not any(lines):
        raise WordpieceError("training corpus is empty")
    words = Counter(chunk for line in lines for chunk in _chunks(line))
    chars = sorted({c for w in words for c in w})
    if vocab_size < len(chars) + len(RESERVED):
        raise WordpieceError(
            f"vocab_size {vocab_size} is smaller than {len(chars)} characters + {len(RESERVED)} reserved tokens"
        )
    vocab = list(RESERVED) + chars
    known = set(vocab)
    segmented = {w: tuple(w) for w in words}
    while len(vocab) < vocab_size:
        pairs: Counter = Counter()
        for w, freq in words.items():
            syms = segmented[w]
            for pair in zip(syms, syms[1:]):
                pairs[pair] += freq
        if not pairs:
            break
        best, count = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
        if count < 2:
            break
        merged = best[0] + best[1]
        for w, syms in segmented.items():
            if len(syms) < 2:
                continue
            out = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            segmented[w] = tuple(out)
        if merged not in known:
            vocab.append(merged)
            known.add(merged)
    logger.info("trained wordpiece model: %d entries from %d lines", len(vocab), len(lines))
    return WordpieceModel(tuple(vocab))


def wp_encode(model: WordpieceModel, text: str) -> List[int]:
    """Greedy longest-match-first per word; unmatched characters map to <unk>."""
    ids: List[int] = []
    for chunk in _chunks(text):
        i = 0
        while i < len(chunk):
            for j in range(min(len(chunk), i + model._max_len), i, -1):
                tok = model._index.get(chunk[i:j])
                if tok is not None and tok >= len(RESERVED):
                    ids.append(tok)
                    i = j
                    break
            else:
                ids.append(UNK)
                i += 1
    return ids


def wp_decode(model: WordpieceModel, ids: Iterable[int]) -> str:
    pieces = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(model.vocabulary):
            raise WordpieceError(f"id {i} out of range for vocabulary of size {len(model.vocabulary)}")
        if i in (PAD, BOS, EOS):
            continue
        pieces.append(model.vocabulary[i])
    return "".join(pieces)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def normalize_text(text: str, normalization: str = "verbatim") -> List[str]:
    if normalization == "verbatim":
        return text.split()
    if normalization == "lower_nopunct":
        return _PUNCT.sub(" ", text.lower()).split()
    raise MetricError(f"unknown normalization {normalization!r}")


def edit_distance(hyp: Sequence[str], ref: Sequence[str]) -> int:
    """Levenshtein distance over tokens (unit substitution/insertion/deletion)."""
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def wer(hypothesis: str, reference: str, normalization: str = "verbatim") -> float:
    ref = normalize_text(reference, normalization)
    if not ref:
        raise MetricError(f"reference is empty after {normalization} normalization")
    return edit_distance(normalize_text(hypothesis, normalization), ref) / len(ref)


def corpus_wer(hypotheses: Sequence[str], references: Sequence[str], normalization: str = "verbatim") -> float:
    """Total edits over total reference words."""
    if len(hypotheses) != len(references):
        raise MetricError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    edits = 0
    words = 0
    for h, r in zip(hypotheses, references):
        ref = normalize_text(r, normalization)
        if not ref:
            raise MetricError(f"reference is empty after {normalization} normalization: {r!r}")
        edits += edit_distance(normalize_text(h, normalization), ref)
        words += len(ref)
    return edits / words


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[str], references: Sequence[str], max_order: int = 4) -> float:
    """
    Corpus BLEU in [0, 100]: geometric mean of clipped n-gram precisions
    (n = 1..4) times the brevity penalty. No smoothing: any zero precision
    gives 0.
    """
    if len(hypotheses) != len(references):
        raise MetricError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not references:
        raise MetricError("no references")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = 0
    ref_len = 0
    for h, r in zip(hypotheses, references):
        ht = h.split()
        rt = r.split()
        if not rt:
            raise MetricError("empty reference line")
        hyp_len += len(ht)
        ref_len += len(rt)
        for n in range(1, max_order + 1):
            hc = ngram_counts(ht, n)
            rc = ngram_counts(rt, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(ht) - n + 1, 0)
    if hyp_len == 0 or any(m == 0 for m in matches):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_order
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_precision)
