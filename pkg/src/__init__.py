from .harness import ExperimentConfig, Workspace, run_experiment, run_grid
from .models import ModelConfig, Seq2Seq, beam_decode, st_assemble
from .preprocess import Frontend
from .toyworld import ScaleConfig, build_corpora
