"""
Attention-based sequence-to-sequence models for ASR, MT and ST.

Encoder: stacked bidirectional LSTMs (speech features or embedded tokens in).
Decoder: stacked unidirectional LSTMs, optional residual connections between
consecutive layers, multi-head additive attention queried with the top layer
state, context fed to the next step's input and to the output projection.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from . import gradcore as gc
from .audio import FeatureSequence
from .gradcore import Tensor, no_grad
from .io import Checkpoint
from .text import BOS, EOS, PAD

logger = logging.getLogger(__name__)

_MASK_BIAS = -1e9


class ModelError(ValueError):
    """Raised for invalid model configs or inputs."""


class IncompatibleCheckpointError(ModelError):
    """Raised when pretrained checkpoints cannot be combined."""


@dataclass(frozen=True)
class ModelConfig:
    task: str
    vocab_size: int
    input_dim: int = 60
    embed_dim: int = 64
    encoder_layers: int = 2
    encoder_cell: int = 64
    frozen_encoder_layers: int = 0
    decoder_layers: int = 2
    decoder_cell: int = 64
    attention_heads: int = 4
    attention_dim: int = 64
    residual: bool = True
    init_scale: float = 0.05

    @property
    def input_kind(self) -> str:
        return "text" if self.task == "MT" else "speech"

    @property
    def encoder_dim(self) -> int:
        return 2 * self.encoder_cell

    @property
    def context_dim(self) -> int:
        return self.encoder_dim

    def validate(self) -> None:
        if self.task not in ("ASR", "MT", "ST"):
            raise ModelError(f"unknown task {self.task!r}")
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ModelError("encoder and decoder need at least one layer")
        if not 0 <= self.frozen_encoder_layers <= self.encoder_layers:
            raise ModelError(f"cannot freeze {self.frozen_encoder_layers} of {self.encoder_layers} encoder layers")
        if self.attention_heads < 1 or self.attention_dim % self.attention_heads:
            raise ModelError(f"attention_dim {self.attention_dim} must split evenly over {self.attention_heads} heads")
        if self.encoder_dim % self.attention_heads:
            raise ModelError(f"encoder output {self.encoder_dim} must split evenly over {self.attention_heads} heads")
        if self.vocab_size <= 4:
            raise ModelError(f"vocab_size {self.vocab_size} leaves no room beyond reserved tokens")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelConfig":
        return cls(**dict(d))

    def fingerprint(self) -> str:
        arch = {k: v for k, v in asdict(self).items() if k not in ("frozen_encoder_layers", "init_scale")}
        return hashlib.sha256(json.dumps(arch, sort_keys=True).encode("utf-8")).hexdigest()[:16]

    @classmethod
    def preset(cls, task: str, preset: str, vocab_size: int, input_dim: int = 60,
               extra_layers: int = 0) -> "ModelConfig":
        """`desk` defaults or the `paper-arch` layer/cell/head counts."""
        if preset == "desk":
            common = dict(vocab_size=vocab_size, input_dim=input_dim, embed_dim=64, encoder_cell=64,
                          decoder_cell=64, decoder_layers=2, attention_heads=4, attention_dim=64)
            layers = {"ASR": 2, "MT": 2, "ST": 2 + extra_layers}[task]
            return cls(task=task, encoder_layers=layers, residual=task != "ASR", **common)
        if preset == "paper-arch":
            common = dict(vocab_size=vocab_size, input_dim=input_dim, embed_dim=512, encoder_cell=1024,
                          decoder_cell=1024, attention_dim=1024)
            if task == "ASR":
                return cls(task=task, encoder_layers=5, decoder_layers=2, attention_heads=4, residual=False, **common)
            if task == "MT":
                return cls(task=task, encoder_layers=6, decoder_layers=8, attention_heads=8, residual=True, **common)
            return cls(task=task, encoder_layers=5 + extra_layers, decoder_layers=8, attention_heads=8,
                       residual=True, **common)
        raise ModelError(f"unknown preset {preset!r}")


def parameter_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Every named parameter's shape, in initialization order, without allocating."""
    cfg.validate()
    shapes: Dict[str, Tuple[int, ...]] = {}
    h = cfg.encoder_cell
    if cfg.input_kind == "text":
        shapes["src_embed"] = (cfg.vocab_size, cfg.embed_dim)
        first = cfg.embed_dim
    else:
        first = cfg.input_dim
    for i in range(cfg.encoder_layers):
        d_in = first if i == 0 else 2 * h
        for direction in ("fw", "bw"):
            shapes[f"encoder.L{i}.{direction}.w_x"] = (d_in, 4 * h)
            shapes[f"encoder.L{i}.{direction}.w_h"] = (h, 4 * h)
            shapes[f"encoder.L{i}.{direction}.b"] = (4 * h,)
    heads = cfg.attention_heads
    shapes["attention.w_key"] = (cfg.encoder_dim, cfg.attention_dim)
    shapes["attention.w_query"] = (cfg.decoder_cell, cfg.attention_dim)
    shapes["attention.v"] = (heads, cfg.attention_dim // heads)
    shapes["attention.w_value"] = (cfg.encoder_dim, cfg.context_dim)
    hd = cfg.decoder_cell
    shapes["decoder.embed"] = (cfg.vocab_size, cfg.embed_dim)
    for i in range(cfg.decoder_layers):
        d_in = cfg.embed_dim + cfg.context_dim if i == 0 else hd
        shapes[f"decoder.L{i}.w_x"] = (d_in, 4 * hd)
        shapes[f"decoder.L{i}.w_h"] = (hd, 4 * hd)
        shapes[f"decoder.L{i}.b"] = (4 * hd,)
    shapes["decoder.out_w"] = (hd + cfg.context_dim, cfg.vocab_size)
    shapes["decoder.out_b"] = (cfg.vocab_size,)
    return shapes


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

class LSTMCell:
    """One LSTM direction; gates ordered input, forget, output, candidate."""

    def __init__(self, w_x: Tensor, w_h: Tensor, b: Tensor):
        self.w_x, self.w_h, self.b = w_x, w_h, b

    @property
    def hidden(self) -> int:
        return self.w_h.shape[0]

    def parameters(self) -> Tuple[Tensor, ...]:
        return (self.w_x, self.w_h, self.b)

    def step(self, xw: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
        """xw is the already projected input x @ w_x + b."""
        n = self.hidden
        z = xw + h @ self.w_h
        sig = gc.sigmoid(z[:, : 3 * n])
        i, f, o = sig[:, :n], sig[:, n: 2 * n], sig[:, 2 * n: 3 * n]
        g = gc.tanh(z[:, 3 * n:])
        c_new = f * c + i * g
        h_new = o * gc.tanh(c_new)
        return h_new, c_new


def _run_direction(cell: LSTMCell, x: Tensor, mask: np.ndarray, reverse: bool) -> List[Tensor]:
    b, t = mask.shape
    xw = x @ cell.w_x + cell.b
    h = Tensor(np.zeros((b, cell.hidden)))
    c = Tensor(np.zeros((b, cell.hidden)))
    outs: List[Optional[Tensor]] = [None] * t
    for step in (range(t - 1, -1, -1) if reverse else range(t)):
        h_new, c_new = cell.step(xw[:, step, :], h, c)
        m = mask[:, step]
        if m.all():
            h, c = h_new, c_new
        else:
            keep = Tensor(m[:, None])
            h = h + keep * (h_new - h)
            c = c + keep * (c_new - c)
        outs[step] = h
    return outs


class BiLSTMLayer:
    def __init__(self, fw: LSTMCell, bw: LSTMCell):
        self.fw, self.bw = fw, bw

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def set_frozen(self, frozen: bool) -> None:
        for p in self.parameters():
            p.requires_grad = not frozen

    def parameters(self) -> Tuple[Tensor, ...]:
        return self.fw.parameters() + self.bw.parameters()

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        fw = gc.stack(_run_direction(self.fw, x, mask, reverse=False), axis=1)
        bw = gc.stack(_run_direction(self.bw, x, mask, reverse=True), axis=1)
        return gc.concat([fw, bw], axis=-1)


class EncoderStack:
    def __init__(self, layers: Sequence[BiLSTMLayer]):
        if not layers:
            raise ModelError("encoder needs at least one layer")
        self.layers = list(layers)

    @property
    def output_dim(self) -> int:
        return 2 * self.layers[-1].fw.hidden

    @property
    def frozen_flags(self) -> List[bool]:
        return [layer.frozen for layer in self.layers]

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        for layer in self.layers:
            x = layer(x, mask)
        return x


def bilstm_encode(inputs: Union[FeatureSequence, Tensor, np.ndarray], stack: EncoderStack,
                  mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Run the stack over (T, D) or (B, T, D) inputs; returns (T, 2H) or (B, T, 2H).

    Frozen layers record no graph unless their input requires a gradient.
    """
    if isinstance(inputs, FeatureSequence):
        inputs = inputs.frames
    x = inputs if isinstance(inputs, Tensor) else Tensor(np.asarray(inputs, dtype=np.float64))
    unbatched = x.ndim == 2
    if unbatched:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3 or x.shape[1] < 1:
        raise ModelError(f"encoder input must be non-empty (T, D) or (B, T, D), got {x.shape}")
    if mask is None:
        mask = np.ones(x.shape[:2])
    out = stack(x, mask)
    return out.reshape(out.shape[1:]) if unbatched else out


@dataclass
class AttentionMemory:
    keys: Tensor    # (B, T, heads, a)
    values: Tensor  # (B, heads, T, dv)
    bias: np.ndarray  # (B, 1, T) 0 on valid positions, large negative on padding

    @property
    def batch(self) -> int:
        return self.bias.shape[0]

    def select(self, rows: np.ndarray) -> "AttentionMemory":
        return AttentionMemory(Tensor(self.keys.data[rows]), Tensor(self.values.data[rows]), self.bias[rows])


class AttentionModule:
    """Multi-head additive attention: score_h(t) = v_h . tanh(W1_h k_t + W2_h q)."""

    def __init__(self, w_key: Tensor, w_query: Tensor, v: Tensor, w_value: Tensor):
        self.w_key, self.w_query, self.v, self.w_value = w_key, w_query, v, w_value

    @property
    def heads(self) -> int:
        return self.v.shape[0]

    @property
    def context_dim(self) -> int:
        return self.w_value.shape[1]

    def parameters(self) -> Tuple[Tensor, ...]:
        return (self.w_key, self.w_query, self.v, self.w_value)

    def precompute(self, keys: Tensor, values: Tensor, mask: Optional[np.ndarray] = None) -> AttentionMemory:
        b, t, _ = keys.shape
        heads, a = self.v.shape
        dv = self.context_dim // heads
        pk = (keys @ self.w_key).reshape(b, t, heads, a)
        pv = (values @ self.w_value).reshape(b, t, heads, dv).transpose(0, 2, 1, 3)
        if mask is None:
            mask = np.ones((b, t))
        bias = np.where(mask > 0, 0.0, _MASK_BIAS)[:, None, :]
        return AttentionMemory(pk, pv, bias)

    def attend(self, query: Tensor, memory: AttentionMemory) -> Tuple[Tensor, Tensor]:
        """query (B, q) -> context (B, heads * dv), weights (B, heads, T)."""
        b = query.shape[0]
        heads, a = self.v.shape
        pq = (query @ self.w_query).reshape(b, 1, heads, a)
        scores = (gc.tanh(memory.keys + pq) * self.v).sum(axis=-1)      # (B, T, heads)
        scores = scores.transpose(0, 2, 1) + Tensor(memory.bias)        # (B, heads, T)
        weights = gc.softmax(scores, axis=-1)
        t = weights.shape[-1]
        context = weights.reshape(b, heads, 1, t) @ memory.values        # (B, heads, 1, dv)
        return context.reshape(b, self.context_dim), weights


def additive_attention(query, keys, values, module: AttentionModule,
                       mask: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
    """Unbatched convenience: query (q,), keys/values (T, d) -> context (heads*dv,), weights (heads, T)."""
    q = query if isinstance(query, Tensor) else Tensor(query)
    k = keys if isinstance(keys, Tensor) else Tensor(keys)
    v = values if isinstance(values, Tensor) else Tensor(values)
    if k.ndim != 2 or k.shape[0] < 1:
        raise ModelError(f"keys must be (T, d) with T >= 1, got {k.shape}")
    memory = module.precompute(k.reshape(1, *k.shape), v.reshape(1, *v.shape),
                               None if mask is None else np.asarray(mask)[None, :])
    context, weights = module.attend(q.reshape(1, q.shape[-1]), memory)
    return context.reshape(context.shape[-1]), weights.reshape(weights.shape[1:])


@dataclass
class DecoderState:
    h: List[Tensor]
    c: List[Tensor]
    context: Tensor

    def select(self, rows: np.ndarray) -> "DecoderState":
        return DecoderState([Tensor(x.data[rows]) for x in self.h], [Tensor(x.data[rows]) for x in self.c],
                            Tensor(self.context.data[rows]))


class DecoderStack:
    def __init__(self, embed: Tensor, cells: Sequence[LSTMCell], out_w: Tensor, out_b: Tensor,
                 residual: bool = True):
        self.embed = embed
        self.cells = list(cells)
        self.out_w, self.out_b = out_w, out_b
        self.residual = residual
        if residual and len({c.hidden for c in self.cells}) > 1:
            raise ModelError("residual connections need equal decoder layer widths")
        if out_w.shape[1] != embed.shape[0]:
            raise ModelError(f"output projection has {out_w.shape[1]} rows for a {embed.shape[0]}-token vocabulary")

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    def parameters(self) -> Tuple[Tensor, ...]:
        params: Tuple[Tensor, ...] = (self.embed,)
        for cell in self.cells:
            params += cell.parameters()
        return params + (self.out_w, self.out_b)

    def init_state(self, batch: int, context_dim: int) -> DecoderState:
        zeros = [Tensor(np.zeros((batch, c.hidden))) for c in self.cells]
        return DecoderState(list(zeros), list(zeros), Tensor(np.zeros((batch, context_dim))))

    def step(self, tokens: np.ndarray, state: DecoderState, attention: AttentionModule,
             memory: AttentionMemory) -> Tuple[Tensor, DecoderState, Tensor]:
        x = gc.concat([gc.take(self.embed, tokens), state.context], axis=-1)
        hs, cs = [], []
        for i, cell in enumerate(self.cells):
            h, c = cell.step(x @ cell.w_x + cell.b, state.h[i], state.c[i])
            hs.append(h)
            cs.append(c)
            x = h + x if (self.residual and i > 0) else h
        context, weights = attention.attend(x, memory)
        logits = gc.concat([x, context], axis=-1) @ self.out_w + self.out_b
        return logits, DecoderState(hs, cs, context), weights


def _check_prefix(prefix: np.ndarray) -> None:
    if prefix.ndim != 2 or prefix.shape[1] < 1:
        raise ModelError(f"target prefix must be (B, L) with L >= 1, got {prefix.shape}")
    if np.any(prefix[:, 0] != BOS):
        raise ModelError("target prefix must begin with bos")
    for row in prefix:
        pads = np.flatnonzero(row == PAD)
        if pads.size and np.any(row[pads[0]:] != PAD):
            raise ModelError("target prefix contains interior pad tokens")


def decode_forward(decoder: DecoderStack, attention: AttentionModule,
                   memory: Union[AttentionMemory, Tensor], prefix: np.ndarray,
                   return_weights: bool = False):
    """Teacher-forced pass: logits (B, L, V) where step t sees prefix[:, :t+1]."""
    prefix = np.asarray(prefix, dtype=np.int64)
    if prefix.ndim == 1:
        prefix = prefix[None, :]
    _check_prefix(prefix)
    if isinstance(memory, Tensor):
        states = memory if memory.ndim == 3 else memory.reshape(1, *memory.shape)
        memory = attention.precompute(states, states)
    state = decoder.init_state(prefix.shape[0], attention.context_dim)
    logits, weights = [], []
    for t in range(prefix.shape[1]):
        step_logits, state, w = decoder.step(prefix[:, t], state, attention, memory)
        logits.append(step_logits)
        weights.append(w)
    out = gc.stack(logits, axis=1)
    return (out, weights) if return_weights else out


# ---------------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------------

class Seq2Seq:
    """Encoder + attention + decoder over a flat named-parameter map."""

    def __init__(self, config: ModelConfig, params: Optional[Mapping[str, Tensor]] = None,
                 rng: Optional[np.random.Generator] = None):
        config.validate()
        self.config = config
        shapes = parameter_shapes(config)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            s = config.init_scale
            params = {name: Tensor(rng.uniform(-s, s, size=shape), requires_grad=True, name=name)
                      for name, shape in shapes.items()}
        else:
            missing = [n for n in shapes if n not in params]
            if missing:
                raise ModelError(f"missing parameters {missing[:5]}")
            for name, shape in shapes.items():
                if params[name].shape != shape:
                    raise ModelError(f"{name}: shape {params[name].shape} != expected {shape}")
        p = dict(params)
        self.src_embed = p.get("src_embed") if config.input_kind == "text" else None
        self.encoder = EncoderStack([
            BiLSTMLayer(
                LSTMCell(p[f"encoder.L{i}.fw.w_x"], p[f"encoder.L{i}.fw.w_h"], p[f"encoder.L{i}.fw.b"]),
                LSTMCell(p[f"encoder.L{i}.bw.w_x"], p[f"encoder.L{i}.bw.w_h"], p[f"encoder.L{i}.bw.b"]),
            )
            for i in range(config.encoder_layers)
        ])
        self.attention = AttentionModule(p["attention.w_key"], p["attention.w_query"], p["attention.v"],
                                         p["attention.w_value"])
        self.decoder = DecoderStack(
            p["decoder.embed"],
            [LSTMCell(p[f"decoder.L{i}.w_x"], p[f"decoder.L{i}.w_h"], p[f"decoder.L{i}.b"])
             for i in range(config.decoder_layers)],
            p["decoder.out_w"], p["decoder.out_b"], residual=config.residual,
        )
        for i, layer in enumerate(self.encoder.layers):
            if i < config.frozen_encoder_layers:
                layer.set_frozen(True)

    @classmethod
    def compose(cls, config: ModelConfig, encoder: EncoderStack, attention: AttentionModule,
                decoder: DecoderStack, src_embed: Optional[Tensor] = None) -> "Seq2Seq":
        """Build a model around existing modules; parameters stay shared, not copied."""
        model = cls.__new__(cls)
        config.validate()
        model.config = config
        model.src_embed = src_embed
        model.encoder, model.attention, model.decoder = encoder, attention, decoder
        shapes = parameter_shapes(config)
        got = model.parameters()
        for name, shape in shapes.items():
            if name not in got or got[name].shape != shape:
                raise ModelError(f"composed model does not match config at {name}")
        return model

    @property
    def task(self) -> str:
        return self.config.task

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def parameters(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        if self.src_embed is not None:
            out["src_embed"] = self.src_embed
        for i, layer in enumerate(self.encoder.layers):
            for direction, cell in (("fw", layer.fw), ("bw", layer.bw)):
                out[f"encoder.L{i}.{direction}.w_x"] = cell.w_x
                out[f"encoder.L{i}.{direction}.w_h"] = cell.w_h
                out[f"encoder.L{i}.{direction}.b"] = cell.b
        a = self.attention
        out.update({"attention.w_key": a.w_key, "attention.w_query": a.w_query, "attention.v": a.v,
                    "attention.w_value": a.w_value, "decoder.embed": self.decoder.embed})
        for i, cell in enumerate(self.decoder.cells):
            out[f"decoder.L{i}.w_x"] = cell.w_x
            out[f"decoder.L{i}.w_h"] = cell.w_h
            out[f"decoder.L{i}.b"] = cell.b
        out["decoder.out_w"] = self.decoder.out_w
        out["decoder.out_b"] = self.decoder.out_b
        return out

    def trainable_parameters(self) -> Dict[str, Tensor]:
        return {k: p for k, p in self.parameters().items() if p.requires_grad}

    def frozen_names(self) -> List[str]:
        return [k for k, p in self.parameters().items() if not p.requires_grad]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state(self, params: Mapping[str, np.ndarray]) -> None:
        own = self.parameters()
        for name, tensor in own.items():
            if name not in params:
                raise ModelError(f"state is missing {name}")
            arr = np.asarray(params[name], dtype=np.float64)
            if arr.shape != tensor.shape:
                raise ModelError(f"{name}: shape {arr.shape} != {tensor.shape}")
            tensor.data[...] = arr

    def to_checkpoint(self, step: int = 0, seed: int = 0, rng_state=None, optimizer=None) -> Checkpoint:
        return Checkpoint(params=self.state_dict(), config=self.config.to_dict(), fingerprint=self.fingerprint,
                          step=step, seed=seed, rng_state=rng_state, frozen=self.frozen_names(),
                          optimizer=optimizer)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Seq2Seq":
        cfg = ModelConfig.from_dict(ckpt.config)
        if cfg.fingerprint() != ckpt.fingerprint:
            raise IncompatibleCheckpointError("checkpoint fingerprint does not match its stored config")
        model = cls(cfg, rng=np.random.default_rng(0))
        model.load_state(ckpt.params)
        return model

    # -- forward -----------------------------------------------------------

    def encode(self, inputs: np.ndarray, mask: np.ndarray) -> AttentionMemory:
        if self.config.input_kind == "text":
            x = gc.take(self.src_embed, np.asarray(inputs, dtype=np.int64))
        else:
            x = Tensor(inputs)
        states = self.encoder(x, mask)
        return self.attention.precompute(states, states, mask)

    def encoder_states(self, inputs: np.ndarray, mask: np.ndarray) -> Tensor:
        if self.config.input_kind == "text":
            x = gc.take(self.src_embed, np.asarray(inputs, dtype=np.int64))
        else:
            x = Tensor(inputs)
        return self.encoder(x, mask)

    def logits(self, batch) -> Tensor:
        memory = self.encode(batch.inputs, batch.input_mask)
        return decode_forward(self.decoder, self.attention, memory, batch.decoder_inputs)

    def loss(self, batch) -> Tensor:
        return sequence_loss(self, batch)

    # -- incremental decoding (see beam_decode) ------------------------------

    def begin(self, source) -> Tuple[DecoderState, AttentionMemory]:
        src = np.asarray(source)
        if src.shape[0] < 1:
            raise ModelError("cannot decode an empty source")
        inputs = src[None, ...]
        memory = self.encode(inputs, np.ones(inputs.shape[:2]))
        return self.decoder.init_state(1, self.attention.context_dim), memory

    def advance(self, tokens: np.ndarray, state) -> Tuple[np.ndarray, Any]:
        dec_state, memory = state
        logits, dec_state, _ = self.decoder.step(np.asarray(tokens, dtype=np.int64), dec_state,
                                                 self.attention, memory)
        logp = gc.log_softmax(logits, axis=-1).data.copy()
        logp[:, PAD] = -np.inf
        logp[:, BOS] = -np.inf
        return logp, (dec_state, memory)

    def reorder(self, state, rows: np.ndarray):
        dec_state, memory = state
        return dec_state.select(rows), memory.select(rows)


def sequence_loss(model: Seq2Seq, batch) -> Tensor:
    """Softmax cross-entropy over target tokens, mean over non-pad positions."""
    return gc.softmax_cross_entropy(model.logits(batch), batch.decoder_targets, batch.target_mask)


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

class Decodable(Protocol):
    def begin(self, source) -> Any: ...

    def advance(self, tokens: np.ndarray, state) -> Tuple[np.ndarray, Any]: ...

    def reorder(self, state, rows: np.ndarray) -> Any: ...


def greedy_decode(model: Decodable, source, max_len: int) -> List[int]:
    with no_grad():
        state = model.begin(source)
        token = np.array([BOS])
        out: List[int] = []
        for _ in range(max_len):
            logp, state = model.advance(token, state)
            best = int(np.argmax(logp[0]))
            if best == EOS:
                break
            out.append(best)
            token = np.array([best])
        return out


def beam_decode(model: Decodable, source, beam_width: int = 2, max_len: int = 40) -> List[int]:
    """
    Beam search over summed token log-probabilities; no length normalization.

    Candidates are ranked by score, then token id, then parent beam, so ties
    resolve deterministically. Returns the best hypothesis ending in eos (or
    the best live one if none ended within max_len), without bos/eos.
    """
    if beam_width < 1 or max_len < 1:
        raise ModelError(f"beam_width and max_len must be >= 1, got {beam_width}/{max_len}")
    with no_grad():
        state = model.begin(source)
        tokens = np.array([BOS])
        scores = np.zeros(1)
        seqs: List[List[int]] = [[]]
        finished: List[Tuple[float, List[int]]] = []
        for _ in range(max_len):
            logp, state = model.advance(tokens, state)
            cand = (scores[:, None] + logp).reshape(-1)
            n, vocab = logp.shape
            parents = np.repeat(np.arange(n), vocab)
            toks = np.tile(np.arange(vocab), n)
            order = np.lexsort((parents, toks, -cand))[:beam_width]
            rows, next_tokens, next_scores, next_seqs = [], [], [], []
            for idx in order:
                score = float(cand[idx])
                if not np.isfinite(score):
                    continue
                parent, tok = int(parents[idx]), int(toks[idx])
                if tok == EOS:
                    finished.append((score, seqs[parent]))
                else:
                    rows.append(parent)
                    next_tokens.append(tok)
                    next_scores.append(score)
                    next_seqs.append(seqs[parent] + [tok])
            if not rows:
                break
            if finished and max(f[0] for f in finished) >= max(next_scores):
                break
            state = model.reorder(state, np.array(rows))
            tokens = np.array(next_tokens)
            scores = np.array(next_scores)
            seqs = next_seqs
        if not finished:
            finished = list(zip(scores.tolist(), seqs))
        finished.sort(key=lambda f: (-f[0], f[1]))
        return list(finished[0][1])


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _config_of(ckpt: Checkpoint, task: str) -> ModelConfig:
    cfg = ModelConfig.from_dict(ckpt.config)
    if cfg.task != task:
        raise IncompatibleCheckpointError(f"expected a {task} checkpoint, got {cfg.task}")
    shapes = parameter_shapes(cfg)
    for name, shape in shapes.items():
        if name not in ckpt.params or tuple(ckpt.params[name].shape) != shape:
            raise IncompatibleCheckpointError(f"{task} checkpoint parameter {name} does not match its config")
    return cfg


def st_assemble(asr_checkpoint: Checkpoint, mt_checkpoint: Checkpoint, extra_layers: int = 3,
                freeze_pretrained_encoder: bool = True, rng: Optional[np.random.Generator] = None) -> Seq2Seq:
    """
    ST model = ASR-pretrained encoder (frozen iff requested) + `extra_layers`
    fresh trainable BiLSTM layers, with the MT-pretrained attention and
    decoder kept trainable.
    """
    if extra_layers < 0:
        raise ModelError(f"extra_layers must be >= 0, got {extra_layers}")
    asr = _config_of(asr_checkpoint, "ASR")
    mt = _config_of(mt_checkpoint, "MT")
    if asr.vocab_size != mt.vocab_size:
        raise IncompatibleCheckpointError(f"ASR vocab {asr.vocab_size} != MT vocab {mt.vocab_size}")
    if asr.encoder_dim != mt.encoder_dim:
        raise IncompatibleCheckpointError(
            f"ASR encoder output {asr.encoder_dim} cannot feed MT attention keys of size {mt.encoder_dim}"
        )
    cfg = ModelConfig(
        task="ST", vocab_size=mt.vocab_size, input_dim=asr.input_dim, embed_dim=mt.embed_dim,
        encoder_layers=asr.encoder_layers + extra_layers, encoder_cell=asr.encoder_cell,
        frozen_encoder_layers=asr.encoder_layers if freeze_pretrained_encoder else 0,
        decoder_layers=mt.decoder_layers, decoder_cell=mt.decoder_cell,
        attention_heads=mt.attention_heads, attention_dim=mt.attention_dim,
        residual=mt.residual, init_scale=mt.init_scale,
    )
    model = Seq2Seq(cfg, rng=rng if rng is not None else np.random.default_rng(0))
    params = model.parameters()
    for name, tensor in params.items():
        if name.startswith("encoder.") and int(name.split(".")[1][1:]) < asr.encoder_layers:
            tensor.data[...] = asr_checkpoint.params[name]
        elif name.startswith(("attention.", "decoder.")):
            tensor.data[...] = mt_checkpoint.params[name]
    logger.info("assembled ST model: %d pretrained encoder layers (%s) + %d extra",
                asr.encoder_layers, "frozen" if freeze_pretrained_encoder else "trainable", extra_layers)
    return model


def with_config(model: Seq2Seq, **changes) -> Seq2Seq:
    """Copy of `model` under a modified config (same parameter values)."""
    cfg = replace(model.config, **changes)
    fresh = Seq2Seq(cfg, rng=np.random.default_rng(0))
    fresh.load_state(model.state_dict())
    return fresh
