"""
Weakly supervised data pipelines and the cascade baseline.

Every pipeline is a pure producer: it returns a new ST corpus and leaves its
input untouched. Each output example records where its speech came from
(`provenance`) and where its translation came from (`label_provenance`).
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .audio import AugmentConfig
from .models import Seq2Seq, beam_decode
from .preprocess import Frontend
from .toyworld import (
    LEXICON,
    SINGLE_SPEAKER,
    Corpus,
    LexiconError,
    TextPair,
    Utterance,
    corpus_texts,
    example_rng,
    oracle_translate,
    render_utterance,
)

logger = logging.getLogger(__name__)

TTS_MODES = ("tts_multi", "tts_single")
UNLABELED_KINDS = ("text", "speech")

_TTS_STREAM = {"tts_multi": 10, "tts_single": 11}
_TEXT_LABEL_STREAM = 12
_FINAL_PUNCT = re.compile(r"^(.*?)([.?]?)$")


class SynthesisError(ValueError):
    """Raised when a pipeline is given the wrong corpus or is missing a tool."""


# ---------------------------------------------------------------------------
# Translators and transcribers
# ---------------------------------------------------------------------------

class OracleTranslator:
    """Stand-in for a high-quality external translation service."""

    task = "MT"
    input_kind = "text"
    label_provenance = "oracle"

    def translate(self, text: str) -> str:
        """Out-of-lexicon words (from a noisy transcript) are dropped before translating."""
        try:
            return oracle_translate(text)
        except LexiconError:
            body, punct = _FINAL_PUNCT.match(text.strip()).groups()
            kept = [w for w in body.split() if w in LEXICON]
            return oracle_translate(" ".join(kept) + punct) if kept else ""

    def hypothesize(self, examples, frontend: Frontend, beam: int = 2, max_len: int = 40):
        return [self.translate(_source_text(ex)) for ex in examples], {}


class ModelTranslator:
    """A trained MT model decoding with beam search."""

    task = "MT"
    input_kind = "text"
    label_provenance = "model_mt"

    def __init__(self, model: Seq2Seq, frontend: Frontend, beam: int = 2, max_len: int = 40):
        if model.task != "MT":
            raise SynthesisError(f"translator must be an MT model, got {model.task}")
        if model.vocab_size != frontend.vocab_size:
            raise SynthesisError(
                f"translator vocabulary ({model.vocab_size}) does not match the wordpiece model ({frontend.vocab_size})"
            )
        self.model, self.frontend, self.beam, self.max_len = model, frontend, beam, max_len

    def translate(self, text: str) -> str:
        ids = self.frontend.tokens(text)
        if ids.size == 0:
            return ""
        return self.frontend.detokenize(beam_decode(self.model, ids, self.beam, self.max_len))

    def hypothesize(self, examples, frontend: Frontend, beam: int = 2, max_len: int = 40):
        return [self.translate(_source_text(ex)) for ex in examples], {}


class ModelTranscriber:
    def __init__(self, model: Seq2Seq, frontend: Frontend, beam: int = 2, max_len: int = 40):
        if model.task != "ASR":
            raise SynthesisError(f"transcriber must be an ASR model, got {model.task}")
        if model.vocab_size != frontend.vocab_size:
            raise SynthesisError(
                f"transcriber vocabulary ({model.vocab_size}) does not match the wordpiece model ({frontend.vocab_size})"
            )
        self.model, self.frontend, self.beam, self.max_len = model, frontend, beam, max_len

    def transcribe(self, utt: Utterance) -> str:
        ids = beam_decode(self.model, self.frontend.speech(utt), self.beam, self.max_len)
        return self.frontend.detokenize(ids)


def _source_text(ex) -> str:
    return ex.source if isinstance(ex, TextPair) else ex.transcript


class Cascade:
    """ASR followed by MT on the predicted transcript."""

    task = "ST"
    input_kind = "speech"

    def __init__(self, transcriber, translator):
        self.transcriber = transcriber
        self.translator = translator

    def __call__(self, utt: Utterance) -> Tuple[str, str]:
        transcript = self.transcriber.transcribe(utt)
        translation = self.translator.translate(transcript) if transcript.strip() else ""
        return transcript, translation

    def hypothesize(self, examples, frontend: Frontend, beam: int = 2, max_len: int = 40):
        pairs = [self(ex) for ex in examples]
        return [t for _, t in pairs], {"transcript": [s for s, _ in pairs]}


def cascade_translate(utterance: Utterance, asr_model: Seq2Seq, mt_model: Seq2Seq, frontend: Frontend,
                      beams: Tuple[int, int] = (2, 2), max_len: int = 40) -> Tuple[str, str]:
    """Returns (predicted transcript, translation of that transcript)."""
    cascade = Cascade(ModelTranscriber(asr_model, frontend, beams[0], max_len),
                      ModelTranslator(mt_model, frontend, beams[1], max_len))
    return cascade(utterance)


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

def tts_synthesize_corpus(mt_corpus: Corpus, mode: str, augment_cfg: Optional[AugmentConfig], seed: int,
                          sample_rate: int = 8000, name: Optional[str] = None) -> Corpus:
    """Synthesized source speech for every (source, target) pair; the target becomes the translation."""
    if mt_corpus.task != "MT":
        raise SynthesisError(f"TTS synthesis reads an MT corpus, got {mt_corpus.task}")
    if mode not in TTS_MODES:
        raise SynthesisError(f"mode must be one of {TTS_MODES}, got {mode!r}")
    speaker = SINGLE_SPEAKER if mode == "tts_single" else None
    out: List[Utterance] = []
    for i, ex in enumerate(mt_corpus.examples):
        utt = render_utterance(ex.source, ex.domain, mode, example_rng(seed, _TTS_STREAM[mode], i), sample_rate,
                               augment_cfg, f"{mode}-{i:06d}", speaker=speaker)
        utt.translation = ex.target
        utt.label_provenance = ex.label_provenance
        out.append(utt)
    corpus = Corpus("ST", out, name or mode, mt_corpus.seed)
    corpus.validate()
    logger.info("synthesized %s: %d utterances", corpus.name, len(corpus))
    return corpus


def mt_synthesize_corpus(asr_corpus: Corpus, translator, name: str = "mt_synth") -> Corpus:
    """Original speech kept; the translator's prediction becomes the target."""
    if asr_corpus.task != "ASR":
        raise SynthesisError(f"MT synthesis reads an ASR corpus, got {asr_corpus.task}")
    out = [replace(utt, translation=translator.translate(utt.transcript),
                   label_provenance=translator.label_provenance)
           for utt in asr_corpus.examples]
    empty = [u.uid for u in out if not u.translation]
    if empty:
        logger.warning("%s: %d empty translations dropped", name, len(empty))
        out = [u for u in out if u.translation]
    corpus = Corpus("ST", out, name, asr_corpus.seed)
    corpus.validate()
    logger.info("labeled %s: %d utterances via %s", name, len(corpus), translator.label_provenance)
    return corpus


@dataclass
class LabelingTools:
    translator: Optional[object] = None
    cascade: Optional[Cascade] = None
    tts_mode: str = "tts_multi"
    augment: Optional[AugmentConfig] = None
    sample_rate: int = 8000


def label_unlabeled(kind: str, corpus: Corpus, tools: LabelingTools, seed: int,
                    name: Optional[str] = None) -> Corpus:
    """
    text: translate each sentence and synthesize its speech.
    speech: keep the speech, label it with the cascade's translation.
    """
    if kind not in UNLABELED_KINDS:
        raise SynthesisError(f"kind must be one of {UNLABELED_KINDS}, got {kind!r}")
    if kind == "text":
        if tools.translator is None:
            raise SynthesisError("labeling unlabeled text needs a translator")
        texts = corpus_texts(corpus)
        domains = [ex.domain for ex in corpus.examples]
        pairs = [TextPair(s, tools.translator.translate(s), d, tools.translator.label_provenance, f"txt-{i:06d}")
                 for i, (s, d) in enumerate(zip(texts, domains))]
        pairs = [p for p in pairs if p.target]
        text_corpus = Corpus("MT", pairs, f"{corpus.name}.labeled", corpus.seed)
        return tts_synthesize_corpus(text_corpus, tools.tts_mode, tools.augment, seed + _TEXT_LABEL_STREAM,
                                     tools.sample_rate, name=name or "text_synth")
    if tools.cascade is None:
        raise SynthesisError("labeling unlabeled speech needs a cascade")
    if corpus.task == "MT":
        raise SynthesisError(f"{corpus.name} holds no speech")
    out = []
    for utt in corpus.examples:
        _, translation = tools.cascade(utt)
        if translation:
            out.append(replace(utt, translation=translation, label_provenance="cascade"))
    result = Corpus("ST", out, name or "speech_synth", corpus.seed)
    result.validate()
    logger.info("labeled %s: %d of %d utterances via cascade", result.name, len(result), len(corpus))
    return result


def provenance_counts(corpus: Corpus) -> Dict[Tuple[str, str], int]:
    """(speech provenance, label provenance) -> count."""
    return dict(Counter((ex.provenance, ex.label_provenance or "") for ex in corpus.examples))


def speaker_diversity(corpus: Corpus) -> int:
    return len({ex.speaker.as_tuple() for ex in corpus.examples})


def label_agreement(corpus: Corpus) -> np.ndarray:
    """Per-example flag: translation equals the oracle translation of the transcript."""
    return np.array([ex.translation == oracle_translate(ex.transcript) for ex in corpus.examples])
