"""
The toy bilingual spoken-language world.

Two text domains (read / conversational) generated from disjoint template
sets, a deterministic translation oracle with adjective-noun reordering and
two-token number words, a parametric formant synthesizer with a continuous
speaker space, and the builder for the three training corpora and two eval sets.
"""

from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .audio import AugmentConfig, Waveform, random_augmentation

logger = logging.getLogger(__name__)


class LexiconError(KeyError):
    """Raised for words outside the toy lexicon."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "out-of-lexicon word"


class CorpusError(ValueError):
    """Raised for inconsistent corpus sizes or missing example fields."""


DOMAINS = ("read", "conversational")
SPEECH_MODES = ("real", "tts_multi", "tts_single")
LABEL_SOURCES = ("oracle", "model_mt", "cascade")
TASKS = ("ASR", "MT", "ST")

# ---------------------------------------------------------------------------
# Lexicon
# ---------------------------------------------------------------------------

NOUNS = ("box", "cat", "dog", "house", "car", "tree", "book", "cup", "ball", "bird")
ADJECTIVES = ("red", "big", "small", "green", "old", "blue")
DIGITS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")
VERBS = ("see", "have", "want", "take")
FUNCTION_WORDS = ("i", "the", "we", "is", "here", "on", "and",
                  "do", "you", "a", "where", "my", "can", "please", "hey", "yes")

CONTENT_WORDS = NOUNS + ADJECTIVES + DIGITS + VERBS
NUMBER_MARKER = "numero"

LEXICON: Dict[str, str] = {
    "box": "caja", "cat": "gato", "dog": "perro", "house": "casa", "car": "coche",
    "tree": "arbol", "book": "libro", "cup": "taza", "ball": "pelota", "bird": "pajaro",
    "red": "rojo", "big": "grande", "small": "pequeno", "green": "verde", "old": "viejo", "blue": "azul",
    "zero": "cero", "one": "uno", "two": "dos", "three": "tres", "four": "cuatro",
    "five": "cinco", "six": "seis", "seven": "siete", "eight": "ocho", "nine": "nueve",
    "see": "ver", "have": "tener", "want": "querer", "take": "tomar",
    "i": "yo", "the": "el", "we": "nosotros", "is": "esta", "here": "aqui", "on": "sobre",
    "and": "y", "do": "acaso", "you": "tu", "a": "un", "where": "donde", "my": "mi",
    "can": "puedes", "please": "porfavor", "hey": "oye", "yes": "si",
}

# Per-domain slot fillers; at least 30% of each domain's content words are exclusive to it.
DOMAIN_WORDS: Dict[str, Dict[str, Tuple[str, ...]]] = {
    "read": {
        "noun": ("box", "house", "book", "tree", "car", "cat", "dog"),
        "adj": ("red", "big", "old", "small"),
        "num": ("zero", "one", "two", "three", "four", "five", "six"),
        "verb": ("see", "have", "take"),
    },
    "conversational": {
        "noun": ("cat", "dog", "car", "cup", "ball", "bird", "tree"),
        "adj": ("green", "blue", "small", "big"),
        "num": ("four", "five", "six", "seven", "eight", "nine"),
        "verb": ("want", "have", "take"),
    },
}

# Templates: slot names in braces, literal words otherwise; the last item is the final punctuation.
TEMPLATES: Dict[str, Tuple[Tuple[str, ...], ...]] = {
    "read": (
        ("i", "{verb}", "the", "{adj}", "{noun}", "."),
        ("we", "{verb}", "{num}", "{noun}", "here", "."),
        ("the", "{adj}", "{noun}", "is", "on", "the", "{noun}", "."),
        ("i", "{verb}", "{num}", "{adj}", "{noun}", "and", "the", "{noun}", "."),
        ("we", "{verb}", "the", "{noun}", "and", "{num}", "{adj}", "{noun}", "."),
    ),
    "conversational": (
        ("do", "you", "{verb}", "a", "{adj}", "{noun}", "?"),
        ("where", "is", "my", "{adj}", "{noun}", "?"),
        ("can", "you", "{verb}", "{num}", "{noun}", "please", "?"),
        ("hey", "do", "you", "{verb}", "{num}", "{adj}", "{noun}", "?"),
        ("yes", "{verb}", "my", "{noun}", "and", "{num}", "{noun}", "."),
        ("please", "{verb}", "a", "{adj}", "{noun}", "and", "my", "{noun}", "."),
    ),
}

_SENTENCE = re.compile(r"^(.*?)([.?])$")


def _split_sentence(text: str) -> Tuple[List[str], str]:
    """Words plus the attached sentence-final punctuation ('' if none)."""
    text = text.strip()
    m = _SENTENCE.match(text)
    if m:
        return m.group(1).split(), m.group(2)
    return text.split(), ""


def sample_sentence(domain: str, rng: np.random.Generator) -> str:
    """Fill a uniformly chosen template of `domain` with uniformly chosen slot words."""
    if domain not in TEMPLATES:
        raise CorpusError(f"unknown domain {domain!r}")
    templates = TEMPLATES[domain]
    template = templates[int(rng.integers(len(templates)))]
    fillers = DOMAIN_WORDS[domain]
    words = []
    for item in template[:-1]:
        if item.startswith("{"):
            choices = fillers[item[1:-1]]
            words.append(choices[int(rng.integers(len(choices)))])
        else:
            words.append(item)
    return " ".join(words) + template[-1]


def parse_sentence(text: str, domain: str) -> Optional[int]:
    """Index of the template of `domain` that generates `text`, or None."""
    words, punct = _split_sentence(text)
    fillers = DOMAIN_WORDS[domain]
    for idx, template in enumerate(TEMPLATES[domain]):
        if template[-1] != punct or len(template) - 1 != len(words):
            continue
        ok = True
        for item, w in zip(template[:-1], words):
            if item.startswith("{"):
                ok = w in fillers[item[1:-1]]
            else:
                ok = w == item
            if not ok:
                break
        if ok:
            return idx
    return None


def oracle_translate(source: str) -> str:
    """
    Word-by-word lexicon mapping, with adjective-noun pairs swapped and number
    words expanded to two target tokens.
    """
    words, punct = _split_sentence(source)
    for w in words:
        if w not in LEXICON:
            raise LexiconError(f"out-of-lexicon word: {w!r}")
    out: List[str] = []
    i = 0
    while i < len(words):
        w = words[i]
        if w in ADJECTIVES and i + 1 < len(words) and words[i + 1] in NOUNS:
            out.extend((LEXICON[words[i + 1]], LEXICON[w]))
            i += 2
            continue
        if w in DIGITS:
            out.extend((NUMBER_MARKER, LEXICON[w]))
        else:
            out.append(LEXICON[w])
        i += 1
    return " ".join(out) + punct


# ---------------------------------------------------------------------------
# Speakers and speech
# ---------------------------------------------------------------------------

PITCH_RANGE = (0.7, 1.4)
FORMANT_RANGE = (0.85, 1.15)
RATE_RANGE = (0.8, 1.25)
BASE_F0 = 110.0


@dataclass(frozen=True)
class SpeakerEmbedding:
    pitch: float
    formant: float
    rate: float

    def __post_init__(self):
        for value, (lo, hi), label in (
            (self.pitch, PITCH_RANGE, "pitch"),
            (self.formant, FORMANT_RANGE, "formant"),
            (self.rate, RATE_RANGE, "rate"),
        ):
            if not lo <= value <= hi:
                raise ValueError(f"speaker {label} factor {value} outside [{lo}, {hi}]")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.pitch, self.formant, self.rate)


SINGLE_SPEAKER = SpeakerEmbedding(1.0, 1.0, 1.0)


def sample_speaker(rng: np.random.Generator) -> SpeakerEmbedding:
    return SpeakerEmbedding(
        pitch=float(rng.uniform(*PITCH_RANGE)),
        formant=float(rng.uniform(*FORMANT_RANGE)),
        rate=float(rng.uniform(*RATE_RANGE)),
    )


@dataclass(frozen=True)
class Phoneme:
    symbol: str
    f1: float
    f2: float
    duration_ms: float
    gain: float


PHONEMES: Tuple[Phoneme, ...] = (
    Phoneme("a", 750.0, 1200.0, 110.0, 1.0),
    Phoneme("e", 500.0, 1900.0, 100.0, 1.0),
    Phoneme("i", 300.0, 2300.0, 90.0, 1.0),
    Phoneme("o", 500.0, 900.0, 105.0, 1.0),
    Phoneme("u", 320.0, 800.0, 95.0, 1.0),
    Phoneme("m", 280.0, 1100.0, 70.0, 0.5),
    Phoneme("n", 280.0, 1600.0, 65.0, 0.5),
    Phoneme("l", 380.0, 1300.0, 75.0, 0.6),
    Phoneme("r", 450.0, 1450.0, 60.0, 0.6),
    Phoneme("s", 1800.0, 3200.0, 120.0, 0.35),
    Phoneme("f", 1500.0, 2800.0, 80.0, 0.3),
    Phoneme("w", 350.0, 650.0, 60.0, 0.55),
)
_PHONEME_BY_SYMBOL = {p.symbol: p for p in PHONEMES}


def _build_pronunciations() -> Dict[str, Tuple[str, ...]]:
    rng = np.random.default_rng(20240517)
    symbols = [p.symbol for p in PHONEMES]
    used = set()
    table = {}
    for word in sorted(LEXICON):
        while True:
            n = int(rng.integers(2, 5))
            pron = tuple(symbols[int(k)] for k in rng.integers(len(symbols), size=n))
            if pron not in used:
                break
        used.add(pron)
        table[word] = pron
    return table


PRONUNCIATIONS: Dict[str, Tuple[str, ...]] = _build_pronunciations()

_FORMANT_BANDWIDTHS = (90.0, 140.0)
_ENVELOPE_STEP_HZ = 10.0
_TTS_SMOOTHING_HZ = 400.0
_EDGE_FADE_S = 0.005


@dataclass
class Utterance:
    waveform: Waveform
    transcript: str
    speaker: SpeakerEmbedding
    provenance: str = "real"
    domain: str = "read"
    translation: Optional[str] = None
    label_provenance: Optional[str] = None
    uid: str = ""

    def __post_init__(self):
        if not self.transcript:
            raise CorpusError("utterance transcript must be non-empty")
        if self.provenance not in SPEECH_MODES:
            raise CorpusError(f"unknown speech provenance {self.provenance!r}")
        if self.provenance == "tts_single" and self.speaker != SINGLE_SPEAKER:
            raise CorpusError("tts_single utterances must use the fixed single speaker")


@dataclass
class TextPair:
    source: str
    target: str
    domain: str = "read"
    label_provenance: str = "oracle"
    uid: str = ""


@dataclass
class Corpus:
    task: str
    examples: list
    name: str
    seed: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise CorpusError(f"unknown task {self.task!r}")

    def __len__(self) -> int:
        return len(self.examples)

    def validate(self) -> None:
        for ex in self.examples:
            if self.task == "MT":
                if not isinstance(ex, TextPair) or not ex.source or not ex.target:
                    raise CorpusError(f"{self.name}: MT examples need source and target ({ex!r})")
            else:
                if not isinstance(ex, Utterance):
                    raise CorpusError(f"{self.name}: {self.task} examples must be utterances")
                if self.task == "ST" and not ex.translation:
                    raise CorpusError(f"{self.name}: ST example {ex.uid} has no translation")


def _spectral_envelope(phoneme: Phoneme, formant_shift: float, freqs: np.ndarray) -> np.ndarray:
    env = np.zeros_like(freqs)
    for centre, bw in zip((phoneme.f1, phoneme.f2), _FORMANT_BANDWIDTHS):
        env += 1.0 / (1.0 + ((freqs - centre * formant_shift) / bw) ** 2)
    return env


def _phoneme_durations(phones: Sequence[Phoneme], speaker: SpeakerEmbedding, jitter: float,
                       rng: np.random.Generator) -> np.ndarray:
    base = np.array([p.duration_ms for p in phones]) / 1000.0
    if jitter > 0:
        base = base * rng.uniform(1.0 - jitter, 1.0 + jitter, size=base.size)
    return base / speaker.rate


def synth_speech(
    text: str,
    speaker: SpeakerEmbedding,
    mode: str,
    rng: np.random.Generator,
    domain: str = "read",
    sample_rate: int = 8000,
) -> Utterance:
    """
    Render `text` as harmonics of f0 = 110 Hz x pitch shaped by two formant
    resonances per phoneme.

    `real` adds per-phoneme duration and pitch jitter (+-10%, +-15% for
    conversational speech) and random harmonic phases. `tts_*` modes are
    jitter-free and smooth the spectral envelope over frequency.
    """
    if mode not in SPEECH_MODES:
        raise ValueError(f"unknown speech mode {mode!r}")
    words, _ = _split_sentence(text)
    for w in words:
        if w not in PRONUNCIATIONS:
            raise LexiconError(f"out-of-lexicon word: {w!r}")
    if mode == "tts_single":
        speaker = SINGLE_SPEAKER
    phones = [_PHONEME_BY_SYMBOL[s] for w in words for s in PRONUNCIATIONS[w]]
    jitter = 0.0 if mode != "real" else (0.15 if domain == "conversational" else 0.10)

    durations = _phoneme_durations(phones, speaker, jitter, rng)
    bounds = np.round(np.concatenate([[0.0], np.cumsum(durations)]) * sample_rate).astype(int)
    samples = np.zeros(bounds[-1])
    nyquist = sample_rate / 2.0
    grid = np.arange(0.0, nyquist, _ENVELOPE_STEP_HZ)
    fade = int(_EDGE_FADE_S * sample_rate)

    for k, ph in enumerate(phones):
        n = bounds[k + 1] - bounds[k]
        if n <= 0:
            continue
        f0 = BASE_F0 * speaker.pitch
        if jitter > 0:
            f0 *= float(rng.uniform(1.0 - jitter, 1.0 + jitter))
        harmonics = f0 * np.arange(1, int((nyquist - 1.0) // f0) + 1)
        envelope = _spectral_envelope(ph, speaker.formant, grid)
        if mode != "real":
            envelope = ndimage.uniform_filter1d(envelope, size=int(_TTS_SMOOTHING_HZ / _ENVELOPE_STEP_HZ),
                                                mode="nearest")
        amps = np.interp(harmonics, grid, envelope) / np.sqrt(np.arange(1, harmonics.size + 1))
        if mode == "real":
            phases = rng.uniform(0.0, 2.0 * np.pi, size=harmonics.size)
        else:
            phases = np.zeros(harmonics.size)
        t = np.arange(n) / sample_rate
        seg = np.sin(2.0 * np.pi * harmonics[:, None] * t[None, :] + phases[:, None]).T @ amps
        if fade and n > 2 * fade:
            ramp = np.linspace(0.0, 1.0, fade)
            seg[:fade] *= ramp
            seg[-fade:] *= ramp[::-1]
        samples[bounds[k]:bounds[k + 1]] = ph.gain * seg

    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak > 0:
        samples *= 0.5 / peak
    return Utterance(
        waveform=Waveform(samples, sample_rate),
        transcript=text,
        speaker=speaker,
        provenance=mode,
        domain=domain,
    )


# ---------------------------------------------------------------------------
# Corpus building
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleConfig:
    mt_size: int = 5000
    asr_size: int = 3000
    st_size: int = 500
    eval_in_size: int = 200
    eval_out_size: int = 200
    sample_rate: int = 8000
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> None:
        sizes = (self.mt_size, self.asr_size, self.st_size, self.eval_in_size, self.eval_out_size)
        if any(s <= 0 for s in sizes):
            raise CorpusError(f"corpus sizes must be positive, got {sizes}")
        if self.st_size > self.mt_size:
            raise CorpusError(f"st_size {self.st_size} exceeds mt_size {self.mt_size}")


def _unique_sentences(domain: str, count: int, rng: np.random.Generator, exclude=frozenset()) -> List[str]:
    seen = set()
    out = []
    budget = 200 * count + 1000
    while len(out) < count and budget > 0:
        budget -= 1
        s = sample_sentence(domain, rng)
        if s in seen or s in exclude:
            continue
        seen.add(s)
        out.append(s)
    if len(out) < count:
        raise CorpusError(f"{domain} templates cannot supply {count} distinct sentences")
    return out


def held_out_split(texts: Sequence[str], held: int, rng: np.random.Generator,
                   key: Optional[Callable[[str], object]] = None) -> Tuple[List[str], List[str]]:
    """
    Random (train, held-out) partition of `texts`.

    With `key`, the split is stratified: every group gets a share of `held`
    proportional to its size (largest remainder), and at least one item when
    there is room for every group and the group has two or more members.
    """
    if not 0 <= held <= len(texts):
        raise CorpusError(f"cannot hold out {held} of {len(texts)} sentences")
    groups: Dict[object, List[str]] = {}
    for i in rng.permutation(len(texts)):
        groups.setdefault(key(texts[i]) if key is not None else None, []).append(texts[i])
    sizes = {g: len(items) for g, items in groups.items()}
    exact = {g: held * n / len(texts) for g, n in sizes.items()}
    quota = {g: int(np.floor(q)) for g, q in exact.items()}
    if held >= len(groups):
        for g, n in sizes.items():
            if n > 1:
                quota[g] = max(quota[g], 1)
    by_remainder = sorted(groups, key=lambda g: exact[g] - np.floor(exact[g]), reverse=True)
    while sum(quota.values()) < held:
        for g in by_remainder:
            if sum(quota.values()) < held and quota[g] < sizes[g]:
                quota[g] += 1
    while sum(quota.values()) > held:
        quota[max(quota, key=quota.get)] -= 1
    train: List[str] = []
    held_out: List[str] = []
    for g, items in groups.items():
        held_out.extend(items[: quota[g]])
        train.extend(items[quota[g]:])
    train = [train[i] for i in rng.permutation(len(train))]
    held_out = [held_out[i] for i in rng.permutation(len(held_out))]
    return train, held_out



def example_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    """Independent generator per (seed, stream, example index)."""
    return np.random.default_rng([seed, stream, index])


def render_utterance(text: str, domain: str, mode: str, rng: np.random.Generator, sample_rate: int,
                     augment_cfg: Optional[AugmentConfig], uid: str,
                     speaker: Optional[SpeakerEmbedding] = None) -> Utterance:
    speaker = sample_speaker(rng) if speaker is None else speaker
    utt = synth_speech(text, speaker, mode, rng, domain=domain, sample_rate=sample_rate)
    if augment_cfg is not None:
        utt.waveform = random_augmentation(utt.waveform, augment_cfg, rng)
    utt.uid = uid
    return utt


def _seed_fingerprint(seed: int, scale: ScaleConfig) -> str:
    return hashlib.sha256(f"{seed}:{scale!r}".encode("utf-8")).hexdigest()[:16]


def build_corpora(scale: ScaleConfig, seed: int) -> Dict[str, Corpus]:
    """
    mt_set: read-domain text pairs; asr_set: real conversational speech with
    transcripts; st_set: real read speech for a subset of mt_set; eval_in /
    eval_out: held-out read / conversational triples. Training speech is
    augmented, eval speech is clean.
    """
    scale.validate()
    rng = np.random.default_rng(seed)
    fp = _seed_fingerprint(seed, scale)
    sr = scale.sample_rate

    read = _unique_sentences("read", scale.mt_size + scale.eval_in_size, rng)
    mt_texts, eval_in_texts = held_out_split(read, scale.eval_in_size, rng,
                                             key=lambda s: parse_sentence(s, "read"))
    eval_out_texts = _unique_sentences("conversational", scale.eval_out_size, rng)
    held_out = frozenset(eval_out_texts)
    asr_texts = []
    while len(asr_texts) < scale.asr_size:
        s = sample_sentence("conversational", rng)
        if s not in held_out:
            asr_texts.append(s)
    st_idx = np.sort(rng.choice(scale.mt_size, size=scale.st_size, replace=False))
    st_texts = [mt_texts[i] for i in st_idx]

    mt_set = Corpus("MT", [TextPair(s, oracle_translate(s), "read", "oracle", f"mt-{i:06d}")
                           for i, s in enumerate(mt_texts)], "mt_set", fp)

    def speech(texts, domain, stream, prefix, augment, with_translation):
        out = []
        for i, s in enumerate(texts):
            utt = render_utterance(s, domain, "real", example_rng(seed, stream, i), sr,
                                   scale.augment if augment else None, f"{prefix}-{i:06d}")
            if with_translation:
                utt.translation = oracle_translate(s)
                utt.label_provenance = "oracle"
            out.append(utt)
        return out

    corpora = {
        "mt_set": mt_set,
        "asr_set": Corpus("ASR", speech(asr_texts, "conversational", 1, "asr", True, False), "asr_set", fp),
        "st_set": Corpus("ST", speech(st_texts, "read", 2, "st", True, True), "st_set", fp),
        "eval_in": Corpus("ST", speech(eval_in_texts, "read", 3, "evin", False, True), "eval_in", fp),
        "eval_out": Corpus("ST", speech(eval_out_texts, "conversational", 4, "evout", False, True), "eval_out", fp),
    }
    for name, corpus in corpora.items():
        corpus.validate()
        logger.info("built %s: %d %s examples", name, len(corpus), corpus.task)
    return corpora


def corpus_texts(corpus: Corpus) -> List[str]:
    if corpus.task == "MT":
        return [ex.source for ex in corpus.examples]
    return [ex.transcript for ex in corpus.examples]


def domain_classifier_accuracy(train_a: Sequence[str], train_b: Sequence[str],
                               test_a: Sequence[str], test_b: Sequence[str]) -> float:
    """Accuracy of a naive-Bayes bag-of-words classifier separating domain a from b."""

    def counts(texts):
        c = Counter(w for t in texts for w in _split_sentence(t)[0])
        return c, sum(c.values())

    ca, na = counts(train_a)
    cb, nb = counts(train_b)
    vocab = len(set(ca) | set(cb)) + 1

    def score(text, c, n):
        return sum(np.log((c[w] + 1.0) / (n + vocab)) for w in _split_sentence(text)[0])

    correct = sum(score(t, ca, na) > score(t, cb, nb) for t in test_a)
    correct += sum(score(t, cb, nb) > score(t, ca, na) for t in test_b)
    return correct / (len(test_a) + len(test_b))
