# %% [markdown]
# # Toy Speech Translation: Walkthrough
#
# This notebook shows an end-to-end run at a tiny scale:
# - Build toy corpora (text pairs, real and augmented speech)
# - Extract log-mel features and train the shared wordpiece model
# - Train a small ST model for a few steps
# - Decode with beam search and score with BLEU

# %%
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(PROJECT_ROOT))

import matplotlib.pyplot as plt
import numpy as np

from src.models import ModelConfig, Seq2Seq, beam_decode
from src.preprocess import Frontend, prep_corpus
from src.synthesis import OracleTranslator, tts_synthesize_corpus
from src.text import bleu, train_wordpiece
from src.toyworld import ScaleConfig, build_corpora
from src.training import MixtureSpec, TrainConfig, evaluate, train_task
from src.visualization import plot_features, plot_loss_traces

# %%
scale = ScaleConfig(mt_size=300, asr_size=120, st_size=60, eval_in_size=20, eval_out_size=20)
corpora = build_corpora(scale, seed=7)
for name, corpus in corpora.items():
    print(f"{name:9s} {corpus.task:3s} {len(corpus):5d} examples")

ex = corpora["st_set"].examples[0]
print(ex.transcript, "->", ex.translation)

# %%
lines = [p.source for p in corpora["mt_set"].examples] + [p.target for p in corpora["mt_set"].examples]
frontend = Frontend(train_wordpiece(lines, vocab_size=120))
print(f"wordpiece entries: {frontend.vocab_size}; feature dim: {frontend.feature_dim}")

fig = plot_features(frontend.speech(ex), title=ex.transcript)
out_dir = PROJECT_ROOT / "outputs" / "figures"
out_dir.mkdir(parents=True, exist_ok=True)
fig.savefig(out_dir / "walkthrough_features.png", dpi=150, bbox_inches="tight")
plt.close(fig)

# %%
# Oracle labels give BLEU 100 against themselves.
oracle = evaluate(OracleTranslator(), corpora["eval_in"], "BLEU", frontend)
print(f"oracle BLEU on eval_in: {oracle.score:.1f}")

# %%
tts = tts_synthesize_corpus(corpora["mt_set"], "tts_multi", scale.augment, seed=7)
prepared = {
    "st_set": prep_corpus(corpora["st_set"], frontend, "ST"),
    "tts_multi": prep_corpus(tts, frontend, "ST"),
}
cfg = ModelConfig.preset("ST", "desk", frontend.vocab_size, frontend.feature_dim)
model = Seq2Seq(cfg, rng=np.random.default_rng(7))
result = train_task(model, prepared, MixtureSpec.of({"st_set": 1.0, "tts_multi": 1.0}),
                    TrainConfig(steps=40, batch_size=8, log_every=10), np.random.default_rng(8))
print(result.loss_trace.tail())

fig = plot_loss_traces({"st": result.loss_trace}, window=10)
fig.savefig(out_dir / "walkthrough_loss.png", dpi=150, bbox_inches="tight")
plt.close(fig)

# %%
hyps = []
refs = []
for utt in corpora["eval_in"].examples[:5]:
    ids = beam_decode(model, frontend.speech(utt), beam_width=2, max_len=30)
    hyps.append(frontend.detokenize(ids))
    refs.append(utt.translation)
    print(f"ref: {utt.translation}\nhyp: {hyps[-1]}\n")
print(f"BLEU on 5 examples after 40 steps: {bleu(hyps, refs):.1f}")
