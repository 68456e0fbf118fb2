import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src import gradcore as gc
from src.gradcore import Tensor
from src.models import (
    AttentionModule,
    IncompatibleCheckpointError,
    ModelConfig,
    ModelError,
    Seq2Seq,
    additive_attention,
    beam_decode,
    bilstm_encode,
    decode_forward,
    greedy_decode,
    parameter_shapes,
    st_assemble,
    with_config,
)
from src.text import BOS, EOS, PAD

from .conftest import tiny_config


def test_desk_and_large_presets():
    asr = ModelConfig.preset("ASR", "desk", vocab_size=100)
    assert (asr.encoder_layers, asr.encoder_cell, asr.residual) == (2, 64, False)
    st = ModelConfig.preset("ST", "desk", vocab_size=100, extra_layers=3)
    assert st.encoder_layers == 5
    big_asr = ModelConfig.preset("ASR", "paper-arch", vocab_size=100)
    big_mt = ModelConfig.preset("MT", "paper-arch", vocab_size=100)
    big_st = ModelConfig.preset("ST", "paper-arch", vocab_size=100, extra_layers=3)
    assert (big_asr.encoder_layers, big_asr.decoder_layers, big_asr.attention_heads) == (5, 2, 4)
    assert (big_mt.encoder_layers, big_mt.decoder_layers, big_mt.attention_heads) == (6, 8, 8)
    assert (big_st.encoder_layers, big_st.decoder_layers) == (8, 8)
    assert big_st.encoder_cell == 1024
    with pytest.raises(ModelError):
        ModelConfig.preset("ST", "huge", vocab_size=100)


def test_parameter_names():
    shapes = parameter_shapes(tiny_config("MT", 30, 60))
    assert shapes["src_embed"] == (30, 8)
    assert shapes["encoder.L0.fw.w_x"] == (8, 16)
    assert shapes["attention.v"] == (2, 4)
    assert shapes["decoder.out_w"] == (16, 30)
    assert "src_embed" not in parameter_shapes(tiny_config("ST", 30, 60))


def test_config_validation():
    with pytest.raises(ModelError):
        tiny_config("MT", 30, 60, attention_heads=3).validate()
    with pytest.raises(ModelError):
        tiny_config("MT", 30, 60, frozen_encoder_layers=2).validate()


def test_fingerprint_ignores_freezing():
    cfg = tiny_config("ST", 30, 60, encoder_layers=2)
    assert cfg.fingerprint() == tiny_config("ST", 30, 60, encoder_layers=2, frozen_encoder_layers=1).fingerprint()
    assert cfg.fingerprint() != tiny_config("ST", 30, 60, encoder_layers=3).fingerprint()


def _attention(rng, key_dim=6, query_dim=5, heads=2, a=4):
    return AttentionModule(Tensor(rng.normal(size=(key_dim, heads * a))), Tensor(rng.normal(size=(query_dim, heads * a))),
                           Tensor(rng.normal(size=(heads, a))), Tensor(rng.normal(size=(key_dim, key_dim))))


def test_attention_weights_are_a_distribution_over_valid_positions():
    rng = np.random.default_rng(0)
    module = _attention(rng)
    keys = rng.normal(size=(7, 6))
    mask = np.array([1, 1, 1, 1, 1, 0, 0], dtype=float)
    context, weights = additive_attention(rng.normal(size=5), keys, keys, module, mask)
    assert context.shape == (6,) and weights.shape == (2, 7)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(weights.data[:, 5:] < 1e-12)
    unmasked, _ = additive_attention(rng.normal(size=5), keys[:5], keys[:5], module)
    assert unmasked.shape == (6,)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**16), st.integers(1, 9), st.integers(1, 3))
def test_attention_weights_always_sum_to_one(seed, length, heads):
    rng = np.random.default_rng(seed)
    module = _attention(rng, heads=heads)
    keys = rng.normal(scale=3.0, size=(length, 6))
    mask = (rng.random(length) < 0.7).astype(float)
    mask[rng.integers(length)] = 1.0
    _, weights = additive_attention(rng.normal(size=5), keys, keys, module, mask)
    assert weights.shape == (heads, length)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(weights.data[:, mask == 0] < 1e-12)


def test_attention_on_single_position_returns_projected_value():
    rng = np.random.default_rng(1)
    module = _attention(rng)
    keys = rng.normal(size=(1, 6))
    context, weights = additive_attention(rng.normal(size=5), keys, keys, module)
    np.testing.assert_allclose(weights.data, 1.0)
    np.testing.assert_allclose(context.data, keys[0] @ module.w_value.data)


def test_encoder_ignores_padding(make_model):
    model = make_model("ST", encoder_layers=2)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, model.config.input_dim))
    alone = bilstm_encode(x, model.encoder)
    padded = np.zeros((2, 8, x.shape[1]))
    padded[0, :5] = x
    padded[1] = rng.normal(size=(8, x.shape[1]))
    mask = np.ones((2, 8))
    mask[0, 5:] = 0
    batched = bilstm_encode(padded, model.encoder, mask)
    np.testing.assert_allclose(batched.data[0, :5], alone.data, atol=1e-12)
    assert alone.shape == (5, 8)


def test_decode_forward_requires_bos(make_model, small_batch):
    model = make_model("MT")
    batch = small_batch("MT")
    memory = model.encode(batch.inputs, batch.input_mask)
    logits = decode_forward(model.decoder, model.attention, memory, batch.decoder_inputs)
    assert logits.shape == batch.decoder_inputs.shape + (model.vocab_size,)
    with pytest.raises(ModelError):
        decode_forward(model.decoder, model.attention, memory, batch.decoder_inputs[:, 1:] + 4)
    bad = batch.decoder_inputs.copy()
    bad[:, 1] = PAD
    bad[:, 2] = 5
    with pytest.raises(ModelError):
        decode_forward(model.decoder, model.attention, memory, bad)


def test_end_to_end_gradients_match_finite_differences(make_model, small_batch):
    model = make_model("MT", seed=3, init_scale=0.3)
    batch = small_batch("MT", n=2)
    params = model.parameters()
    gc.zero_grad(params)
    grads = gc.backward(model.loss(batch))
    rng = np.random.default_rng(4)
    eps = 1e-6
    for name, p in params.items():
        flat = p.data.reshape(-1)
        for k in rng.choice(flat.size, size=min(3, flat.size), replace=False):
            orig = flat[k]
            flat[k] = orig + eps
            up = model.loss(batch).item()
            flat[k] = orig - eps
            down = model.loss(batch).item()
            flat[k] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grads[name].reshape(-1)[k]
            assert abs(numeric - analytic) <= 1e-5 * max(1.0, abs(numeric) + abs(analytic)), name


def test_frozen_encoder_layers_get_no_gradient(make_model, small_batch):
    model = make_model("ST", encoder_layers=2, frozen_encoder_layers=1)
    grads = gc.backward(model.loss(small_batch("ST", n=2)))
    assert not any(name.startswith("encoder.L0.") for name in grads)
    assert any(name.startswith("encoder.L1.") for name in grads)
    assert set(model.frozen_names()) == {n for n in model.parameters() if n.startswith("encoder.L0.")}


def test_checkpoint_round_trip_reproduces_logits(make_model, small_batch):
    model = make_model("ST", seed=5)
    batch = small_batch("ST", n=2)
    clone = Seq2Seq.from_checkpoint(model.to_checkpoint(step=3))
    np.testing.assert_array_equal(clone.logits(batch).data, model.logits(batch).data)


class ScriptedModel:
    """Next-token distributions keyed by the prefix emitted so far (vocab of 6)."""

    def __init__(self, table, default):
        self.table, self.default = table, default

    def begin(self, source):
        return [()]

    def advance(self, tokens, state):
        seqs = [s if t == BOS else s + (int(t),) for s, t in zip(state, tokens)]
        rows = []
        for s in seqs:
            probs = np.array(self.table.get(s, self.default), dtype=float)
            with np.errstate(divide="ignore"):
                logp = np.log(probs)
            logp[[PAD, BOS]] = -np.inf
            rows.append(logp)
        return np.stack(rows), seqs

    def reorder(self, state, rows):
        return [state[r] for r in rows]


#          pad  bos  eos  unk  a     b
START = [0.0, 0.0, 0.0, 0.0, 0.55, 0.45]
AFTER_A = [0.0, 0.0, 0.3, 0.0, 0.4, 0.3]
AFTER_B = [0.0, 0.0, 0.9, 0.0, 0.05, 0.05]
ANY = [0.0, 0.0, 0.2, 0.0, 0.5, 0.3]


def test_wider_beam_finds_the_better_hypothesis():
    model = ScriptedModel({(): START, (4,): AFTER_A, (5,): AFTER_B}, ANY)
    assert beam_decode(model, None, beam_width=2, max_len=10) == [5]
    assert greedy_decode(model, None, max_len=3) == [4, 4, 4]
    assert beam_decode(model, None, beam_width=1, max_len=3) == [4, 4, 4]


def test_ties_break_towards_the_lower_token_id():
    model = ScriptedModel({(): [0, 0, 0, 0, 0.5, 0.5]}, [0, 0, 1.0, 0, 0, 0])
    assert beam_decode(model, None, beam_width=1, max_len=5) == [4]


def test_no_eos_within_max_len_returns_best_live_hypothesis():
    never_ends = [0.0, 0.0, 0.0, 0.1, 0.6, 0.3]
    model = ScriptedModel({}, never_ends)
    assert beam_decode(model, None, beam_width=2, max_len=4) == [4, 4, 4, 4]
    with pytest.raises(ModelError):
        beam_decode(model, None, beam_width=0)


def test_beam_decode_on_a_real_model_is_deterministic(make_model, prepared):
    model = make_model("MT", seed=6)
    src = prepared["MT"].examples[0].inputs
    first = beam_decode(model, src, beam_width=3, max_len=6)
    assert first == beam_decode(model, src, beam_width=3, max_len=6)
    assert len(first) <= 6 and BOS not in first and EOS not in first
    assert beam_decode(model, src, beam_width=1, max_len=6) == greedy_decode(model, src, max_len=6)


def test_st_assemble_copies_pretrained_parts(make_model):
    asr, mt = make_model("ASR", seed=7), make_model("MT", seed=8)
    st = st_assemble(asr.to_checkpoint(), mt.to_checkpoint(), extra_layers=2)
    p = st.parameters()
    assert st.config.encoder_layers == 3
    np.testing.assert_array_equal(p["encoder.L0.fw.w_x"].data, asr.parameters()["encoder.L0.fw.w_x"].data)
    np.testing.assert_array_equal(p["decoder.out_w"].data, mt.parameters()["decoder.out_w"].data)
    np.testing.assert_array_equal(p["attention.v"].data, mt.parameters()["attention.v"].data)
    assert st.encoder.frozen_flags == [True, False, False]
    unfrozen = st_assemble(asr.to_checkpoint(), mt.to_checkpoint(), extra_layers=0, freeze_pretrained_encoder=False)
    assert unfrozen.frozen_names() == []


def test_st_assemble_rejects_mismatched_components(frontend):
    asr = Seq2Seq(tiny_config("ASR", frontend.vocab_size, frontend.feature_dim))
    wide_mt = Seq2Seq(tiny_config("MT", frontend.vocab_size, frontend.feature_dim, encoder_cell=8))
    with pytest.raises(IncompatibleCheckpointError):
        st_assemble(asr.to_checkpoint(), wide_mt.to_checkpoint())
    other_vocab = Seq2Seq(tiny_config("MT", frontend.vocab_size + 1, frontend.feature_dim))
    with pytest.raises(IncompatibleCheckpointError):
        st_assemble(asr.to_checkpoint(), other_vocab.to_checkpoint())
    with pytest.raises(IncompatibleCheckpointError):
        st_assemble(asr.to_checkpoint(), asr.to_checkpoint())


def test_with_config_keeps_values(make_model):
    model = make_model("ST", encoder_layers=2)
    frozen = with_config(model, frozen_encoder_layers=2)
    assert len(frozen.frozen_names()) == 12
    np.testing.assert_array_equal(frozen.state_dict()["decoder.out_b"], model.state_dict()["decoder.out_b"])


def test_removing_residual_connections_changes_the_output(make_model, small_batch):
    batch = small_batch("MT", n=2)
    deep = make_model("MT", seed=3, decoder_layers=2, residual=True)
    plain = with_config(deep, residual=False)
    assert not np.allclose(deep.logits(batch).data, plain.logits(batch).data)
    # a single decoder layer has nothing to skip over
    shallow = make_model("MT", seed=3, residual=True)
    np.testing.assert_array_equal(shallow.logits(batch).data, with_config(shallow, residual=False).logits(batch).data)


def test_identical_keys_give_uniform_weights():
    rng = np.random.default_rng(3)
    module = _attention(rng)
    keys = np.tile(rng.normal(size=(1, 6)), (4, 1))
    _, weights = additive_attention(rng.normal(size=5), keys, keys, module)
    np.testing.assert_allclose(weights.data, 0.25, atol=1e-12)


def test_zero_output_projection_gives_uniform_predictions(make_model, small_batch):
    model = make_model("MT")
    params = model.parameters()
    params["decoder.out_w"].data[...] = 0.0
    params["decoder.out_b"].data[...] = 0.0
    logp = gc.log_softmax(model.logits(small_batch("MT", n=2)), axis=-1).data
    np.testing.assert_allclose(logp, -np.log(model.vocab_size), atol=1e-12)


def test_frozen_encoder_without_extra_layers_trains_only_the_decoder_side(make_model):
    st = st_assemble(make_model("ASR", seed=1).to_checkpoint(), make_model("MT", seed=2).to_checkpoint(),
                     extra_layers=0)
    trainable = {n for n, p in st.parameters().items() if p.requires_grad}
    assert trainable and all(n.startswith(("decoder.", "attention.")) for n in trainable)
