"""
Training loops, evaluation and checkpoint plumbing.

Design goals:
- One code path per optimizer step, shared by single-task and multi-task runs.
- Frozen parameters are never handed to the optimizer.
- Loss traces and per-example decodes come back as DataFrames for CSV export.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from . import gradcore as gc
from .gradcore import OptimizerState, Tensor
from .io import Checkpoint, CheckpointError, read_checkpoint, write_checkpoint
from .models import (
    EncoderStack,
    ModelConfig,
    Seq2Seq,
    beam_decode,
)
from .preprocess import Frontend, PreparedCorpus, collate, prep_corpus
from .text import bleu, corpus_wer, normalize_text
from .toyworld import Corpus, TextPair

logger = logging.getLogger(__name__)

METRICS = ("BLEU", "WER")


class TrainingError(RuntimeError):
    """Raised when a training request cannot run."""


class AliasingError(TrainingError):
    """Raised when multi-task networks do not share the expected parameters."""


class EvaluationError(ValueError):
    """Raised when a metric cannot be computed for a system/corpus pair."""


# ---------------------------------------------------------------------------
# Configuration and sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 400
    batch_size: int = 16
    learning_rate: float = 1e-3
    max_grad_norm: float = 5.0
    log_every: int = 50

    def validate(self) -> None:
        if self.steps < 1:
            raise TrainingError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise TrainingError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass(frozen=True)
class MixtureSpec:
    """(corpus name, weight) pairs; a name `base.view` reads corpus `base` through another task view."""

    entries: Tuple[Tuple[str, float], ...]

    def __post_init__(self):
        if not self.entries:
            raise TrainingError("mixture is empty")
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            raise TrainingError(f"mixture names must be unique, got {names}")
        bad = [(n, w) for n, w in self.entries if not w > 0]
        if bad:
            raise TrainingError(f"mixture weights must be positive, got {bad}")

    @classmethod
    def of(cls, weights: Mapping[str, float]) -> "MixtureSpec":
        return cls(tuple((str(k), float(v)) for k, v in weights.items()))

    @property
    def names(self) -> List[str]:
        return [n for n, _ in self.entries]

    @property
    def probabilities(self) -> np.ndarray:
        w = np.array([w for _, w in self.entries], dtype=np.float64)
        return w / w.sum()

    def to_dict(self) -> Dict[str, float]:
        return dict(self.entries)


class MixtureSampler:
    """Draws names by weight. A single-entry mixture consumes no randomness."""

    def __init__(self, spec: MixtureSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self._names = spec.names
        self._p = spec.probabilities

    def draw(self) -> str:
        if len(self._names) == 1:
            return self._names[0]
        return self._names[int(self.rng.choice(len(self._names), p=self._p))]

    def counts(self, n: int) -> Dict[str, int]:
        out = {name: 0 for name in self._names}
        for _ in range(n):
            out[self.draw()] += 1
        return out


class TaskSampler(MixtureSampler):
    def __init__(self, tasks: Sequence[str], rng: np.random.Generator):
        super().__init__(MixtureSpec(tuple((t, 1.0) for t in tasks)), rng)


def split_view(name: str, default_view: str) -> Tuple[str, str]:
    base, _, view = name.partition(".")
    return base, (view.upper() if view else default_view)


def prepare_mixture(corpora: Mapping[str, Corpus], mixture: MixtureSpec, frontend: Frontend,
                    view: str) -> Dict[str, PreparedCorpus]:
    out = {}
    for name in mixture.names:
        base, v = split_view(name, view)
        if base not in corpora:
            raise TrainingError(f"mixture names unknown corpus {base!r}")
        if v != view:
            raise TrainingError(f"{name}: view {v} does not feed a {view} model")
        out[name] = prep_corpus(corpora[base], frontend, v, name=name)
    return out


# ---------------------------------------------------------------------------
# Optimizer state <-> checkpoint dict
# ---------------------------------------------------------------------------

def optimizer_to_dict(state: OptimizerState) -> Dict[str, Any]:
    return {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
            "step": state.step, "m": dict(state.m), "v": dict(state.v)}


def optimizer_from_dict(d: Mapping[str, Any]) -> OptimizerState:
    return OptimizerState(lr=float(d["lr"]), beta1=float(d["beta1"]), beta2=float(d["beta2"]),
                          eps=float(d["eps"]), step=int(d["step"]),
                          m={k: np.array(v) for k, v in d["m"].items()},
                          v={k: np.array(v) for k, v in d["v"].items()})


# ---------------------------------------------------------------------------
# Single-task training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Seq2Seq
    checkpoint: Checkpoint
    loss_trace: pd.DataFrame
    optimizer: Optional[OptimizerState] = None


def _draw_batch(corpus: PreparedCorpus, batch_size: int, rng: np.random.Generator):
    idx = rng.choice(len(corpus), size=min(batch_size, len(corpus)), replace=False)
    return collate([corpus.examples[i] for i in idx], corpus.input_kind)


def _optimizer_step(model: Seq2Seq, update: Mapping[str, Tensor], corpus: PreparedCorpus, cfg: TrainConfig,
                    rng: np.random.Generator, opt: OptimizerState) -> float:
    """One batch: loss, backward, clip, Adam over `update` (keyed by optimizer names)."""
    batch = _draw_batch(corpus, cfg.batch_size, rng)
    gc.zero_grad(update)
    loss = model.loss(batch)
    value = float(loss.item())
    if not np.isfinite(value):
        logger.warning("non-finite loss on %s; step skipped", corpus.name)
        return value
    gc.backward(loss)
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in update.items()}
    grads, _ = gc.clip_grad_norm(grads, cfg.max_grad_norm)
    gc.adam_step(update, grads, opt)
    return value


def apply_freeze_spec(model: Seq2Seq, freeze_spec: Sequence[str]) -> List[str]:
    """Freeze every parameter whose name equals or starts with an entry; returns the frozen names."""
    params = model.parameters()
    frozen = []
    for entry in freeze_spec:
        hits = [k for k in params if k == entry or k.startswith(entry + ".")]
        if not hits:
            raise TrainingError(f"freeze_spec names unknown parameters: {entry!r}")
        for k in hits:
            params[k].requires_grad = False
        frozen.extend(hits)
    return frozen


def train_task(
    model: Seq2Seq,
    corpora: Mapping[str, PreparedCorpus],
    mixture: MixtureSpec,
    cfg: TrainConfig,
    rng: np.random.Generator,
    freeze_spec: Sequence[str] = (),
    optimizer: Optional[OptimizerState] = None,
    start_step: int = 0,
    seed: int = 0,
) -> TrainResult:
    """
    Each step samples a corpus by weight, draws a batch from it without
    replacement and applies one Adam update to the trainable parameters.
    """
    cfg.validate()
    for name in mixture.names:
        if name not in corpora:
            raise TrainingError(f"mixture names unknown corpus {name!r}")
        if len(corpora[name]) == 0:
            raise TrainingError(f"corpus {name!r} is empty")
        if corpora[name].view != model.task:
            raise TrainingError(f"corpus {name!r} is a {corpora[name].view} view, model is {model.task}")
    apply_freeze_spec(model, freeze_spec)
    params = model.trainable_parameters()
    if not params:
        raise TrainingError("every parameter is frozen; nothing to train")
    if optimizer is None:
        optimizer = OptimizerState.init(params, lr=cfg.learning_rate)
    else:
        for k, p in params.items():
            optimizer.m.setdefault(k, np.zeros_like(p.data))
            optimizer.v.setdefault(k, np.zeros_like(p.data))

    sampler = MixtureSampler(mixture, rng)
    rows = []
    for i in range(cfg.steps):
        name = sampler.draw()
        loss = _optimizer_step(model, params, corpora[name], cfg, rng, optimizer)
        step = start_step + i + 1
        rows.append((step, loss, name))
        if cfg.log_every and step % cfg.log_every == 0:
            recent = [r[1] for r in rows[-cfg.log_every:]]
            logger.info("%s step %d: loss %.4f", model.task, step, float(np.mean(recent)))
    trace = pd.DataFrame(rows, columns=["step", "loss", "corpus"])
    ckpt = model.to_checkpoint(step=start_step + cfg.steps, seed=seed, rng_state=rng.bit_generator.state,
                               optimizer=optimizer_to_dict(optimizer))
    return TrainResult(model, ckpt, trace, optimizer)


ASR_PRETRAIN_MIXTURE = MixtureSpec((("asr_set", 8.0), ("st_set.asr", 1.0)))
MT_PRETRAIN_MIXTURE = MixtureSpec((("mt_set", 1.0),))


def pretrain_asr(corpora: Mapping[str, Corpus], frontend: Frontend, cfg: TrainConfig, seed: int,
                 preset: str = "desk", mixture: MixtureSpec = ASR_PRETRAIN_MIXTURE) -> TrainResult:
    rng = np.random.default_rng([seed, 101])
    model_cfg = ModelConfig.preset("ASR", preset, frontend.vocab_size, frontend.feature_dim)
    model = Seq2Seq(model_cfg, rng=rng)
    prepared = prepare_mixture(corpora, mixture, frontend, "ASR")
    logger.info("pretraining ASR on %s for %d steps", mixture.to_dict(), cfg.steps)
    return train_task(model, prepared, mixture, cfg, rng, seed=seed)


def pretrain_mt(corpora: Mapping[str, Corpus], frontend: Frontend, cfg: TrainConfig, seed: int,
                preset: str = "desk", mixture: MixtureSpec = MT_PRETRAIN_MIXTURE) -> TrainResult:
    rng = np.random.default_rng([seed, 102])
    model_cfg = ModelConfig.preset("MT", preset, frontend.vocab_size, frontend.feature_dim)
    model = Seq2Seq(model_cfg, rng=rng)
    prepared = prepare_mixture(corpora, mixture, frontend, "MT")
    logger.info("pretraining MT on %s for %d steps", mixture.to_dict(), cfg.steps)
    return train_task(model, prepared, mixture, cfg, rng, seed=seed)


# ---------------------------------------------------------------------------
# Multi-task training
# ---------------------------------------------------------------------------

def tie_multitask(st: Seq2Seq, asr: Seq2Seq, mt: Seq2Seq) -> Tuple[Seq2Seq, Seq2Seq]:
    """
    ASR and MT networks rebuilt around the ST network's modules: ASR reuses
    the lower ST encoder layers, MT reuses the ST attention and decoder.
    """
    n = asr.config.encoder_layers
    if st.config.encoder_layers < n:
        raise AliasingError(f"ST encoder has {st.config.encoder_layers} layers, ASR needs {n}")
    asr_tied = Seq2Seq.compose(asr.config, EncoderStack(st.encoder.layers[:n]), asr.attention, asr.decoder)
    mt_tied = Seq2Seq.compose(mt.config, mt.encoder, st.attention, st.decoder, src_embed=mt.src_embed)
    return asr_tied, mt_tied


def check_aliasing(models: Mapping[str, Seq2Seq]) -> None:
    st = models.get("ST")
    if st is None:
        raise AliasingError("multi-task training needs an ST network")
    asr = models.get("ASR")
    if asr is not None:
        for i, layer in enumerate(asr.encoder.layers):
            if i >= len(st.encoder.layers) or st.encoder.layers[i] is not layer:
                raise AliasingError(f"ASR encoder layer {i} is not the ST encoder layer")
    mt = models.get("MT")
    if mt is not None and (mt.decoder is not st.decoder or mt.attention is not st.attention):
        raise AliasingError("MT decoder/attention are not the ST decoder/attention")
    names_by_id: Dict[int, str] = {}
    for task, model in models.items():
        for name, tensor in model.parameters().items():
            key = id(tensor)
            if key in names_by_id and names_by_id[key].split(":", 1)[1] != name:
                raise AliasingError(f"{task}:{name} aliases differently named {names_by_id[key]}")
            names_by_id.setdefault(key, f"{task}:{name}")


def joint_parameters(models: Mapping[str, Seq2Seq]) -> Dict[str, Dict[str, Tensor]]:
    """Per task, its trainable parameters keyed by the name of their first owner."""
    owner: Dict[int, str] = {}
    out: Dict[str, Dict[str, Tensor]] = {}
    for task, model in models.items():
        out[task] = {}
        for name, tensor in model.trainable_parameters().items():
            key = owner.setdefault(id(tensor), f"{task}:{name}")
            out[task][key] = tensor
    return out


@dataclass
class MultitaskResult:
    models: Dict[str, Seq2Seq]
    checkpoints: Dict[str, Checkpoint]
    loss_trace: pd.DataFrame
    task_counts: Dict[str, int] = field(default_factory=dict)


def multitask_train(
    models: Mapping[str, Seq2Seq],
    corpora: Mapping[str, Mapping[str, PreparedCorpus]],
    mixtures: Mapping[str, MixtureSpec],
    cfg: TrainConfig,
    rng: np.random.Generator,
    seed: int = 0,
) -> MultitaskResult:
    """
    Each step picks a task uniformly, then a corpus from that task's mixture,
    and updates that task's network. Shared tensors are one optimizer entry.
    """
    cfg.validate()
    check_aliasing(models)
    tasks = [t for t in ("ST", "ASR", "MT") if t in models]
    for t in tasks:
        if t not in mixtures or t not in corpora:
            raise TrainingError(f"task {t} has no mixture or corpora")
        for name in mixtures[t].names:
            if name not in corpora[t] or len(corpora[t][name]) == 0:
                raise TrainingError(f"{t} corpus {name!r} is missing or empty")
    params = joint_parameters(models)
    every = {k: p for group in params.values() for k, p in group.items()}
    if not every:
        raise TrainingError("every parameter is frozen; nothing to train")
    opt = OptimizerState.init(every, lr=cfg.learning_rate)
    task_sampler = TaskSampler(tasks, rng)
    corpus_samplers = {t: MixtureSampler(mixtures[t], rng) for t in tasks}
    rows = []
    counts = {t: 0 for t in tasks}
    for i in range(cfg.steps):
        task = task_sampler.draw()
        counts[task] += 1
        name = corpus_samplers[task].draw()
        loss = _optimizer_step(models[task], params[task], corpora[task][name], cfg, rng, opt)
        rows.append((i + 1, loss, name, task))
        if cfg.log_every and (i + 1) % cfg.log_every == 0:
            logger.info("multitask step %d: %s", i + 1, counts)
    trace = pd.DataFrame(rows, columns=["step", "loss", "corpus", "task"])
    ckpts = {t: models[t].to_checkpoint(step=cfg.steps, seed=seed) for t in tasks}
    return MultitaskResult(dict(models), ckpts, trace, counts)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def reference_field(task: str) -> str:
    return "transcript" if task == "ASR" else "translation"


def source_of(model: Seq2Seq, ex, frontend: Frontend) -> Optional[np.ndarray]:
    if model.config.input_kind == "text":
        text = ex.source if isinstance(ex, TextPair) else ex.transcript
        ids = frontend.tokens(text)
        return ids if ids.size else None
    return frontend.speech(ex)


def decode_corpus(model: Seq2Seq, examples: Sequence, frontend: Frontend, beam: int = 2,
                  max_len: int = 40) -> List[str]:
    out = []
    for ex in examples:
        src = source_of(model, ex, frontend)
        out.append("" if src is None else frontend.detokenize(beam_decode(model, src, beam, max_len)))
    return out


@dataclass
class EvalResult:
    corpus: str
    metric: str
    normalization: str
    score: float
    outputs: pd.DataFrame

    def as_row(self) -> Dict[str, Any]:
        return {"corpus": self.corpus, "metric": self.metric, "normalization": self.normalization,
                "value": self.score}


def _references(corpus: Corpus, task: str) -> List[str]:
    refs = []
    for ex in corpus.examples:
        if isinstance(ex, TextPair):
            ref = ex.source if task == "ASR" else ex.target
        else:
            ref = getattr(ex, reference_field(task))
        if not ref:
            raise EvaluationError(f"{corpus.name}/{ex.uid} has no {reference_field(task)} reference")
        refs.append(ref)
    return refs


def evaluate(
    system,
    corpus: Corpus,
    metric: str,
    frontend: Frontend,
    normalization: str = "verbatim",
    beam: int = 2,
    max_len: int = 40,
) -> EvalResult:
    """
    Decode every example and score the corpus. `system` is a Seq2Seq model or
    any object with `task` and `hypothesize(examples, frontend, beam, max_len)`
    returning (hypotheses, extra columns).
    """
    if metric not in METRICS:
        raise EvaluationError(f"unknown metric {metric!r}")
    task = system.task
    if metric == "WER" and task != "ASR":
        raise EvaluationError(f"WER scores transcripts; a {task} system produces translations")
    input_kind = system.config.input_kind if isinstance(system, Seq2Seq) else system.input_kind
    if input_kind == "speech" and corpus.task == "MT":
        raise EvaluationError(f"{corpus.name} holds text only; a {task} system needs speech")
    refs = _references(corpus, task)
    if isinstance(system, Seq2Seq):
        hyps, extra = decode_corpus(system, corpus.examples, frontend, beam, max_len), {}
    else:
        hyps, extra = system.hypothesize(corpus.examples, frontend, beam, max_len)
    if metric == "BLEU":
        if normalization == "verbatim":
            score = bleu(hyps, refs)
        else:
            score = bleu([" ".join(normalize_text(h, normalization)) for h in hyps],
                         [" ".join(normalize_text(r, normalization)) for r in refs])
    else:
        score = corpus_wer(hyps, refs, normalization)
    outputs = pd.DataFrame({"uid": [ex.uid for ex in corpus.examples], "reference": refs, "hypothesis": hyps,
                            **extra})
    logger.info("%s %s on %s (%s): %.3f", task, metric, corpus.name, normalization, score)
    return EvalResult(corpus.name, metric, normalization, float(score), outputs)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: Union[Seq2Seq, Checkpoint], path: Path) -> Path:
    ckpt = model if isinstance(model, Checkpoint) else model.to_checkpoint()
    return write_checkpoint(ckpt, path)


def load_checkpoint(path: Path, expected: Optional[ModelConfig] = None) -> Seq2Seq:
    ckpt = read_checkpoint(path)
    if expected is not None and ckpt.fingerprint != expected.fingerprint():
        cfg = ckpt.config
        raise CheckpointError(
            f"{path}: fingerprint {ckpt.fingerprint} ({cfg.get('task')}) does not match "
            f"expected {expected.fingerprint()} ({expected.task})"
        )
    model = Seq2Seq.from_checkpoint(ckpt)
    for name in ckpt.frozen:
        model.parameters()[name].requires_grad = False
    return model
