"""
Preprocessing steps: range checks, feature extraction, tokenization, collation.

We keep preprocessing separate from the models so that:
- schema/range problems are caught before any training step runs
- models can assume padded float64 arrays with explicit masks
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .audio import MelConfig, extract_features
from .text import BOS, EOS, PAD, WordpieceModel
from .toyworld import (
    FORMANT_RANGE,
    PITCH_RANGE,
    RATE_RANGE,
    Corpus,
    TextPair,
    Utterance,
)

logger = logging.getLogger(__name__)

VIEWS = ("ASR", "MT", "ST")


class RangeError(ValueError):
    """Raised when values fall outside expected ranges."""


def validate_ranges(corpus: Corpus) -> None:
    """Waveforms within [-1, 1] and finite; speaker factors inside the embedding box."""
    for ex in corpus.examples:
        if not isinstance(ex, Utterance):
            continue
        s = ex.waveform.samples
        if s.size and float(np.max(np.abs(s))) > 1.0:
            raise RangeError(f"{corpus.name}/{ex.uid}: waveform samples exceed [-1, 1]")
        p, f, r = ex.speaker.as_tuple()
        if not (PITCH_RANGE[0] <= p <= PITCH_RANGE[1] and FORMANT_RANGE[0] <= f <= FORMANT_RANGE[1]
                and RATE_RANGE[0] <= r <= RATE_RANGE[1]):
            raise RangeError(f"{corpus.name}/{ex.uid}: speaker {ex.speaker} outside the embedding box")


def stack_frames(frames: np.ndarray, stack: int) -> np.ndarray:
    """Concatenate `stack` consecutive frames and keep every `stack`-th; (T, M) -> (T // stack, stack * M)."""
    if stack <= 1:
        return frames
    if frames.shape[0] < stack:
        frames = np.pad(frames, ((0, stack - frames.shape[0]), (0, 0)), mode="edge")
    t = (frames.shape[0] // stack) * stack
    return frames[:t].reshape(t // stack, stack * frames.shape[1])


@dataclass(frozen=True)
class Frontend:
    """Everything needed to turn raw examples into model inputs and back."""

    wordpiece: WordpieceModel
    mel: MelConfig = MelConfig()
    stack: int = 3

    @property
    def feature_dim(self) -> int:
        return self.mel.n_mels * max(self.stack, 1)

    @property
    def vocab_size(self) -> int:
        return len(self.wordpiece)

    def speech(self, utt: Utterance) -> np.ndarray:
        return stack_frames(extract_features(utt.waveform, self.mel).frames, self.stack)

    def tokens(self, text: str) -> np.ndarray:
        return np.asarray(self.wordpiece.encode(text), dtype=np.int64)

    def targets(self, text: str) -> np.ndarray:
        """bos + ids + eos."""
        return np.concatenate([[BOS], self.tokens(text), [EOS]]).astype(np.int64)

    def detokenize(self, ids: Sequence[int]) -> str:
        return self.wordpiece.decode(ids)


@dataclass
class PreparedExample:
    inputs: np.ndarray
    targets: np.ndarray
    uid: str = ""


@dataclass
class PreparedCorpus:
    name: str
    view: str
    input_kind: str
    examples: List[PreparedExample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)


def view_input_kind(view: str) -> str:
    return "text" if view == "MT" else "speech"


def prep_corpus(corpus: Corpus, frontend: Frontend, view: str, name: Optional[str] = None) -> PreparedCorpus:
    """
    Convert a corpus into (inputs, targets) arrays for one task view:
    - ASR: speech features -> transcript tokens
    - MT:  transcript tokens -> translation tokens
    - ST:  speech features -> translation tokens
    """
    if view not in VIEWS:
        raise ValueError(f"view must be one of {VIEWS}, got {view!r}")
    validate_ranges(corpus)
    out = PreparedCorpus(name or corpus.name, view, view_input_kind(view))
    for ex in corpus.examples:
        if isinstance(ex, TextPair):
            if view != "MT":
                raise RangeError(f"{corpus.name}: text-only examples cannot feed the {view} view")
            out.examples.append(PreparedExample(frontend.tokens(ex.source), frontend.targets(ex.target), ex.uid))
            continue
        if view == "ASR":
            inputs, target = frontend.speech(ex), ex.transcript
        elif view == "MT":
            if not ex.translation:
                raise RangeError(f"{corpus.name}/{ex.uid}: MT view needs a translation")
            inputs, target = frontend.tokens(ex.transcript), ex.translation
        else:
            if not ex.translation:
                raise RangeError(f"{corpus.name}/{ex.uid}: ST view needs a translation")
            inputs, target = frontend.speech(ex), ex.translation
        out.examples.append(PreparedExample(inputs, frontend.targets(target), ex.uid))
    logger.info("prepared %s (%s view): %d examples", out.name, view, len(out))
    return out


@dataclass
class Batch:
    inputs: np.ndarray          # (B, T, F) float features or (B, T) token ids
    input_mask: np.ndarray      # (B, T) 1.0 on real positions
    decoder_inputs: np.ndarray  # (B, L) bos + y, pad-filled
    decoder_targets: np.ndarray  # (B, L) y + eos, pad-filled
    target_mask: np.ndarray     # (B, L)

    @property
    def size(self) -> int:
        return int(self.input_mask.shape[0])


def pad_inputs(inputs: Sequence[np.ndarray], input_kind: str):
    lengths = [len(x) for x in inputs]
    if min(lengths) < 1:
        raise RangeError("cannot collate an empty input sequence")
    t = max(lengths)
    mask = np.zeros((len(inputs), t))
    if input_kind == "speech":
        dim = inputs[0].shape[1]
        arr = np.zeros((len(inputs), t, dim))
    else:
        arr = np.full((len(inputs), t), PAD, dtype=np.int64)
    for i, x in enumerate(inputs):
        arr[i, : len(x)] = x
        mask[i, : len(x)] = 1.0
    return arr, mask


def collate(examples: Sequence[PreparedExample], input_kind: str) -> Batch:
    inputs, input_mask = pad_inputs([ex.inputs for ex in examples], input_kind)
    l = max(len(ex.targets) - 1 for ex in examples)
    dec_in = np.full((len(examples), l), PAD, dtype=np.int64)
    dec_out = np.full((len(examples), l), PAD, dtype=np.int64)
    tmask = np.zeros((len(examples), l))
    for i, ex in enumerate(examples):
        y = ex.targets
        dec_in[i, : len(y) - 1] = y[:-1]
        dec_out[i, : len(y) - 1] = y[1:]
        tmask[i, : len(y) - 1] = 1.0
    return Batch(inputs, input_mask, dec_in, dec_out, tmask)


