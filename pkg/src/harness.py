"""
Config-driven experiment harness.

Stages (each idempotent unless forced):
  prepare-data -> data/<key>/        corpora + wordpiece vocabulary
  pretrain     -> pretrained/<key>/  ASR and MT checkpoints
  synthesize   -> synth/<key>/       weakly supervised ST corpora
  train        -> experiments/<name>-<fingerprint>/st.ckpt
  evaluate     -> experiments/<name>-<fingerprint>/results.csv + decodes
  report       -> reports/<grid>.md / .csv / figures
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from . import reporting
from .audio import AugmentConfig, MelConfig
from .io import (
    corpus_exists,
    ensure_dir,
    load_corpus,
    load_json,
    load_wordpiece,
    save_corpus,
    save_wordpiece,
    write_checkpoint,
    write_json,
)
from .models import ModelConfig, Seq2Seq, st_assemble
from .preprocess import Frontend
from .synthesis import (
    Cascade,
    LabelingTools,
    ModelTranscriber,
    ModelTranslator,
    OracleTranslator,
    label_unlabeled,
    mt_synthesize_corpus,
    tts_synthesize_corpus,
)
from .text import train_wordpiece
from .toyworld import Corpus, ScaleConfig, build_corpora
from .training import (
    ASR_PRETRAIN_MIXTURE,
    METRICS,
    MT_PRETRAIN_MIXTURE,
    MixtureSpec,
    TrainConfig,
    evaluate,
    load_checkpoint,
    multitask_train,
    prepare_mixture,
    pretrain_asr,
    pretrain_mt,
    tie_multitask,
    train_task,
)

logger = logging.getLogger(__name__)

SYSTEMS = ("st", "cascade", "asr", "mt")
PRESETS = ("desk", "paper-arch")
TRANSLATORS = ("oracle", "model")
EVAL_SETS = {"eval_in": "in_domain", "eval_out": "out_of_domain"}
BASE_CORPORA = ("mt_set", "asr_set", "st_set", "eval_in", "eval_out")
# ST training corpora and the pipeline producing each.
PIPELINES = {
    "st_set": "real",
    "tts_multi": "tts",
    "tts_single": "tts",
    "mt_synth": "translator",
    "text_synth": "translator",
    "speech_synth": "cascade",
}


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


class MissingArtifactError(FileNotFoundError):
    """Raised when a stage runs before the stage it depends on."""


class GridError(RuntimeError):
    """Raised when an experiment in a grid fails; partial results stay on disk."""


def _fingerprint(payload: Mapping[str, Any]) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Experiment configs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    system: str = "st"
    preset: str = "desk"
    scale: Dict[str, int] = field(default_factory=dict)
    vocab_size: int = 200
    pretrain_encoder: bool = False
    pretrain_decoder: bool = False
    freeze_encoder: bool = False
    extra_layers: int = 0
    mixture: Dict[str, float] = field(default_factory=lambda: {"st_set": 1.0})
    multitask: bool = False
    steps: int = 400
    pretrain_steps: int = 600
    batch_size: int = 16
    learning_rate: float = 1e-3
    eval_sets: List[str] = field(default_factory=lambda: ["eval_in", "eval_out"])
    metrics: List[str] = field(default_factory=lambda: ["BLEU"])
    normalization: str = "verbatim"
    beam: int = 2
    max_len: int = 40
    translator: str = "model"
    table: str = ""
    row: str = ""

    def validate(self) -> None:
        if not self.name:
            raise ConfigError("config needs a name")
        if self.system not in SYSTEMS:
            raise ConfigError(f"{self.name}: system must be one of {SYSTEMS}, got {self.system!r}")
        if self.preset not in PRESETS:
            raise ConfigError(f"{self.name}: preset must be one of {PRESETS}, got {self.preset!r}")
        if self.translator not in TRANSLATORS:
            raise ConfigError(f"{self.name}: translator must be one of {TRANSLATORS}, got {self.translator!r}")
        unknown = [k for k in self.mixture if k not in PIPELINES]
        if unknown:
            raise ConfigError(f"{self.name}: mixture names corpora no pipeline produces: {unknown}")
        if any(not w > 0 for w in self.mixture.values()) or not self.mixture:
            raise ConfigError(f"{self.name}: mixture weights must be positive")
        if self.freeze_encoder and not self.pretrain_encoder:
            raise ConfigError(f"{self.name}: freezing needs a pretrained encoder")
        if self.multitask and not (self.pretrain_encoder and self.pretrain_decoder):
            raise ConfigError(f"{self.name}: multi-task training starts from both pretrained components")
        if self.extra_layers < 0 or self.steps < 1 or self.pretrain_steps < 1:
            raise ConfigError(f"{self.name}: extra_layers >= 0 and positive step budgets required")
        bad_sets = [s for s in self.eval_sets if s not in EVAL_SETS]
        if bad_sets:
            raise ConfigError(f"{self.name}: unknown eval sets {bad_sets}")
        bad_metrics = [m for m in self.metrics if m not in METRICS]
        if bad_metrics:
            raise ConfigError(f"{self.name}: unknown metrics {bad_metrics}")
        if "WER" in self.metrics and self.system != "asr":
            raise ConfigError(f"{self.name}: WER is reported for asr systems only")
        scale_keys = {f.name for f in fields(ScaleConfig)} - {"augment"}
        extra = [k for k in self.scale if k not in scale_keys]
        if extra:
            raise ConfigError(f"{self.name}: unknown scale keys {extra}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(k for k in d if k not in known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key in ("name", "seed"):
            if key not in d:
                raise ConfigError(f"config is missing mandatory key {key!r}")
        cfg = cls(**dict(d))
        cfg.validate()
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def fingerprint(self) -> str:
        payload = self.to_dict()
        payload.pop("table")
        payload.pop("row")
        return _fingerprint(payload)

    @property
    def scale_config(self) -> ScaleConfig:
        return ScaleConfig(augment=AugmentConfig(), **self.scale)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(steps=self.steps, batch_size=self.batch_size, learning_rate=self.learning_rate)

    @property
    def pretrain_config(self) -> TrainConfig:
        return TrainConfig(steps=self.pretrain_steps, batch_size=self.batch_size, learning_rate=self.learning_rate)

    @property
    def needs_pretrained(self) -> bool:
        if self.system in ("asr", "cascade") or (self.system == "mt" and self.translator == "model"):
            return True
        if self.pretrain_encoder or self.pretrain_decoder:
            return True
        return any(PIPELINES[n] == "cascade" or (PIPELINES[n] == "translator" and self.translator == "model")
                   for n in self.mixture)


def load_config(path: Path, seed: Optional[int] = None, preset: Optional[str] = None) -> ExperimentConfig:
    cfg = ExperimentConfig.from_dict(load_json(path))
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if preset is not None:
        changes["preset"] = preset
    return replace(cfg, **changes) if changes else cfg


@dataclass(frozen=True)
class GridEntry:
    config: ExperimentConfig
    table: str
    row: str


def load_grid(grid_dir: Path, seed: Optional[int] = None, preset: Optional[str] = None) -> Dict[str, Any]:
    """manifest.json: {name, seeds, experiments: [{config, table, row}]}."""
    manifest = load_json(grid_dir / "manifest.json")
    for key in ("name", "seeds", "experiments"):
        if key not in manifest:
            raise ConfigError(f"{grid_dir}/manifest.json is missing {key!r}")
    seeds = [seed] if seed is not None else [int(s) for s in manifest["seeds"]]
    entries = []
    names = set()
    for item in manifest["experiments"]:
        base = load_config(grid_dir / item["config"], preset=preset)
        if base.name in names:
            raise ConfigError(f"duplicate experiment name {base.name!r} in {grid_dir}")
        names.add(base.name)
        cfg = replace(base, table=item.get("table", base.table), row=item.get("row", base.row))
        entries.append(GridEntry(cfg, cfg.table, cfg.row))
    return {"name": manifest["name"], "seeds": seeds, "entries": entries}


# ---------------------------------------------------------------------------
# Workspace stages
# ---------------------------------------------------------------------------

@dataclass
class Workspace:
    root: Path
    force: bool = False

    def data_key(self, cfg: ExperimentConfig) -> str:
        return _fingerprint({"seed": cfg.seed, "scale": asdict(cfg.scale_config), "vocab": cfg.vocab_size})

    def pretrain_key(self, cfg: ExperimentConfig) -> str:
        return _fingerprint({"data": self.data_key(cfg), "preset": cfg.preset, "steps": cfg.pretrain_steps,
                             "batch": cfg.batch_size, "lr": cfg.learning_rate})

    def data_dir(self, cfg: ExperimentConfig) -> Path:
        return self.root / "data" / self.data_key(cfg)

    def pretrained_dir(self, cfg: ExperimentConfig) -> Path:
        return self.root / "pretrained" / self.pretrain_key(cfg)

    def synth_dir(self, cfg: ExperimentConfig, name: str) -> Path:
        kind = PIPELINES[name]
        if kind == "tts":
            return self.root / "synth" / self.data_key(cfg) / name
        if kind == "cascade":
            return self.root / "synth" / self.pretrain_key(cfg) / name
        if kind == "translator" and cfg.translator == "oracle":
            return self.root / "synth" / self.data_key(cfg) / f"{name}.oracle"
        return self.root / "synth" / self.pretrain_key(cfg) / f"{name}.{cfg.translator}"

    def experiment_dir(self, cfg: ExperimentConfig) -> Path:
        return self.root / "experiments" / f"{cfg.name}-{cfg.fingerprint()}"

    def reports_dir(self) -> Path:
        return self.root / "reports"


def prepare_data(ws: Workspace, cfg: ExperimentConfig) -> Path:
    out = ws.data_dir(cfg)
    if (out / "wordpiece.vocab").exists() and not ws.force:
        logger.info("data %s already prepared", out.name)
        return out
    corpora = build_corpora(cfg.scale_config, cfg.seed)
    lines = [ex.source for ex in corpora["mt_set"].examples] + [ex.target for ex in corpora["mt_set"].examples]
    lines += [ex.transcript for ex in corpora["asr_set"].examples]
    wordpiece = train_wordpiece(lines, cfg.vocab_size)
    for name, corpus in corpora.items():
        save_corpus(corpus, out / name)
    save_wordpiece(wordpiece, out / "wordpiece.vocab")
    write_json(out / "data.json", {"seed": cfg.seed, "scale": asdict(cfg.scale_config),
                                   "vocab_size": len(wordpiece), "sizes": {k: len(v) for k, v in corpora.items()}})
    logger.info("prepared data %s", out)
    return out


def load_data(ws: Workspace, cfg: ExperimentConfig, names: Sequence[str] = BASE_CORPORA):
    out = ws.data_dir(cfg)
    if not (out / "wordpiece.vocab").exists():
        raise MissingArtifactError(f"missing data for {cfg.name}: run prepare-data first ({out})")
    frontend = Frontend(load_wordpiece(out / "wordpiece.vocab"), MelConfig(sample_rate=cfg.scale_config.sample_rate))
    return {n: load_corpus(out / n) for n in names}, frontend


def pretrain(ws: Workspace, cfg: ExperimentConfig) -> Dict[str, Path]:
    out = ws.pretrained_dir(cfg)
    paths = {"ASR": out / "asr.ckpt", "MT": out / "mt.ckpt"}
    if all(p.exists() for p in paths.values()) and not ws.force:
        logger.info("pretrained %s already present", out.name)
        return paths
    corpora, frontend = load_data(ws, cfg, ("mt_set", "asr_set", "st_set"))
    for task, fn in (("ASR", pretrain_asr), ("MT", pretrain_mt)):
        result = fn(corpora, frontend, cfg.pretrain_config, cfg.seed, preset=cfg.preset)
        write_checkpoint(result.checkpoint, paths[task])
        result.loss_trace.to_csv(out / f"{task.lower()}_loss.csv", index=False)
    return paths


def _pretrained_model(ws: Workspace, cfg: ExperimentConfig, task: str) -> Seq2Seq:
    path = ws.pretrained_dir(cfg) / f"{task.lower()}.ckpt"
    if not path.exists():
        raise MissingArtifactError(f"missing checkpoint: {path} (run pretrain first)")
    return load_checkpoint(path)


def _translator(ws: Workspace, cfg: ExperimentConfig, frontend: Frontend):
    if cfg.translator == "oracle":
        return OracleTranslator()
    return ModelTranslator(_pretrained_model(ws, cfg, "MT"), frontend, cfg.beam, cfg.max_len)


def _cascade(ws: Workspace, cfg: ExperimentConfig, frontend: Frontend) -> Cascade:
    transcriber = ModelTranscriber(_pretrained_model(ws, cfg, "ASR"), frontend, cfg.beam, cfg.max_len)
    translator = ModelTranslator(_pretrained_model(ws, cfg, "MT"), frontend, cfg.beam, cfg.max_len)
    return Cascade(transcriber, translator)


def synthesize(ws: Workspace, cfg: ExperimentConfig) -> Dict[str, Path]:
    """Materialize every synthetic corpus the config's mixture names."""
    paths = {}
    needed = [n for n in cfg.mixture if n != "st_set"]
    if not needed:
        return paths
    corpora, frontend = load_data(ws, cfg, ("mt_set", "asr_set"))
    scale = cfg.scale_config
    for name in needed:
        out = ws.synth_dir(cfg, name)
        paths[name] = out
        if corpus_exists(out) and not ws.force:
            continue
        if name in ("tts_multi", "tts_single"):
            corpus = tts_synthesize_corpus(corpora["mt_set"], name, scale.augment, cfg.seed, scale.sample_rate)
        elif name == "mt_synth":
            corpus = mt_synthesize_corpus(corpora["asr_set"], _translator(ws, cfg, frontend))
        elif name == "text_synth":
            tools = LabelingTools(translator=_translator(ws, cfg, frontend), augment=scale.augment,
                                  sample_rate=scale.sample_rate)
            corpus = label_unlabeled("text", corpora["mt_set"], tools, cfg.seed)
        else:
            corpus = label_unlabeled("speech", corpora["asr_set"], LabelingTools(cascade=_cascade(ws, cfg, frontend)),
                                     cfg.seed)
        save_corpus(corpus, out)
    return paths


def _mixture_corpora(ws: Workspace, cfg: ExperimentConfig, base: Mapping[str, Corpus]) -> Dict[str, Corpus]:
    out = {}
    for name in cfg.mixture:
        if name == "st_set":
            out[name] = base["st_set"]
            continue
        path = ws.synth_dir(cfg, name)
        if not corpus_exists(path):
            raise MissingArtifactError(f"missing synthetic corpus {name}: run synthesize first ({path})")
        out[name] = load_corpus(path)
    return out


def build_st_model(ws: Workspace, cfg: ExperimentConfig, frontend: Frontend) -> Seq2Seq:
    """Vanilla ST model, or one assembled from whichever components are pretrained."""
    rng = np.random.default_rng([cfg.seed, 201])
    if not (cfg.pretrain_encoder or cfg.pretrain_decoder):
        st_cfg = ModelConfig.preset("ST", cfg.preset, frontend.vocab_size, frontend.feature_dim, cfg.extra_layers)
        return Seq2Seq(st_cfg, rng=rng)
    parts = {}
    for task, wanted in (("ASR", cfg.pretrain_encoder), ("MT", cfg.pretrain_decoder)):
        if wanted:
            parts[task] = _pretrained_model(ws, cfg, task).to_checkpoint()
        else:
            fresh = ModelConfig.preset(task, cfg.preset, frontend.vocab_size, frontend.feature_dim)
            parts[task] = Seq2Seq(fresh, rng=rng).to_checkpoint()
    return st_assemble(parts["ASR"], parts["MT"], cfg.extra_layers, cfg.freeze_encoder, rng=rng)


def train(ws: Workspace, cfg: ExperimentConfig) -> Optional[Path]:
    out = ws.experiment_dir(cfg)
    ckpt_path = out / "st.ckpt"
    if cfg.system != "st":
        return None
    if ckpt_path.exists() and not ws.force:
        logger.info("%s already trained", cfg.name)
        return ckpt_path
    base, frontend = load_data(ws, cfg, ("st_set", "asr_set", "mt_set") if cfg.multitask else ("st_set",))
    corpora = _mixture_corpora(ws, cfg, base)
    mixture = MixtureSpec.of(cfg.mixture)
    model = build_st_model(ws, cfg, frontend)
    rng = np.random.default_rng([cfg.seed, 301])
    prepared = prepare_mixture(corpora, mixture, frontend, "ST")
    if cfg.multitask:
        asr, mt = tie_multitask(model, _pretrained_model(ws, cfg, "ASR"), _pretrained_model(ws, cfg, "MT"))
        result = multitask_train(
            {"ST": model, "ASR": asr, "MT": mt},
            {"ST": prepared,
             "ASR": prepare_mixture(base, ASR_PRETRAIN_MIXTURE, frontend, "ASR"),
             "MT": prepare_mixture(base, MT_PRETRAIN_MIXTURE, frontend, "MT")},
            {"ST": mixture, "ASR": ASR_PRETRAIN_MIXTURE, "MT": MT_PRETRAIN_MIXTURE},
            cfg.train_config, rng, seed=cfg.seed,
        )
        ckpt, trace = result.checkpoints["ST"], result.loss_trace
    else:
        result = train_task(model, prepared, mixture, cfg.train_config, rng, seed=cfg.seed)
        ckpt, trace = result.checkpoint, result.loss_trace
    write_checkpoint(ckpt, ckpt_path)
    trace.to_csv(out / "loss.csv", index=False)
    write_json(out / "config.json", cfg.to_dict())
    return ckpt_path


def _system(ws: Workspace, cfg: ExperimentConfig, frontend: Frontend):
    if cfg.system == "st":
        path = ws.experiment_dir(cfg) / "st.ckpt"
        if not path.exists():
            raise MissingArtifactError(f"missing checkpoint: {path} (run train first)")
        return load_checkpoint(path)
    if cfg.system == "cascade":
        return _cascade(ws, cfg, frontend)
    if cfg.system == "mt" and cfg.translator == "oracle":
        return OracleTranslator()
    return _pretrained_model(ws, cfg, cfg.system.upper())


def evaluate_experiment(ws: Workspace, cfg: ExperimentConfig) -> pd.DataFrame:
    """One ResultRow per (eval set, metric); per-example decodes written as JSON lines."""
    out = ws.experiment_dir(cfg)
    results = out / "results.csv"
    if results.exists() and not ws.force:
        return pd.read_csv(results, keep_default_na=False, dtype=RESULT_DTYPES)
    if cfg.system == "st" and not (out / "st.ckpt").exists():
        raise MissingArtifactError(f"missing checkpoint: {out / 'st.ckpt'} (run train first)")
    corpora, frontend = load_data(ws, cfg, tuple(cfg.eval_sets))
    system = _system(ws, cfg, frontend)
    rows = []
    for eval_set in cfg.eval_sets:
        for metric in cfg.metrics:
            res = evaluate(system, corpora[eval_set], metric, frontend, cfg.normalization, cfg.beam, cfg.max_len)
            ensure_dir(out)
            res.outputs.to_json(out / f"decodes_{eval_set}_{metric}.jsonl", orient="records", lines=True,
                                force_ascii=False)
            rows.append(ResultRow(cfg.name, EVAL_SETS[eval_set], metric, cfg.normalization, res.score, cfg.seed,
                                  cfg.steps, cfg.fingerprint(), cfg.table, cfg.row).to_dict())
    df = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    if not np.all(np.isfinite(df["value"].to_numpy(dtype=float))):
        raise GridError(f"{cfg.name}: non-finite metric value")
    ensure_dir(out)
    df.to_csv(results, index=False)
    return df


RESULT_COLUMNS = ["experiment", "eval_set", "metric", "normalization", "value", "seed", "steps", "fingerprint",
                  "table", "row"]
RESULT_DTYPES = {"experiment": str, "eval_set": str, "metric": str, "normalization": str, "fingerprint": str,
                 "table": str, "row": str}


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    eval_set: str
    metric: str
    normalization: str
    value: float
    seed: int
    steps: int
    fingerprint: str
    table: str = ""
    row: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def run_experiment(ws: Workspace, cfg: ExperimentConfig) -> pd.DataFrame:
    prepare_data(ws, cfg)
    if cfg.needs_pretrained:
        pretrain(ws, cfg)
    synthesize(ws, cfg)
    train(ws, cfg)
    return evaluate_experiment(ws, cfg)


def run_grid(ws: Workspace, grid_dir: Path, seed: Optional[int] = None,
             preset: Optional[str] = None) -> pd.DataFrame:
    """Run (or reuse) every experiment for every grid seed; results.csv in reports/ holds all rows."""
    grid = load_grid(grid_dir, seed, preset)
    frames = []
    ensure_dir(ws.reports_dir())
    partial = ws.reports_dir() / f"{grid['name']}_results.csv"
    for s in grid["seeds"]:
        for entry in grid["entries"]:
            cfg = replace(entry.config, seed=s)
            logger.info("grid %s: %s (seed %d)", grid["name"], cfg.name, s)
            try:
                frames.append(run_experiment(ws, cfg))
            except Exception as exc:
                if frames:
                    pd.concat(frames, ignore_index=True).to_csv(partial, index=False)
                raise GridError(f"{cfg.name} (seed {s}) failed: {exc}") from exc
    results = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=RESULT_COLUMNS)
    results.to_csv(partial, index=False)
    return results


def _configs_at(path: Path, seed: Optional[int], preset: Optional[str]) -> List[ExperimentConfig]:
    if path.is_dir():
        grid = load_grid(path, seed, preset)
        return [replace(e.config, seed=s) for s in grid["seeds"] for e in grid["entries"]]
    if not path.exists():
        raise MissingArtifactError(f"Missing file: {path}")
    return [load_config(path, seed, preset)]


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m src", description="Desk-scale speech translation experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("prepare-data", "Build and persist toy corpora and the wordpiece model"),
        ("pretrain", "Pretrain the ASR and MT models"),
        ("synthesize", "Materialize synthetic ST corpora"),
        ("train", "Train the ST model of each config"),
        ("evaluate", "Evaluate each config and write result rows"),
        ("report", "Render result tables for a grid or config"),
        ("grid", "Run every stage for a grid, then report"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, required=True, help="Experiment config file or grid directory")
        p.add_argument("--seed", type=int, default=None, help="Override the config seed")
        p.add_argument("--out-dir", type=Path, default=Path("workspace"), help="Workspace root")
        p.add_argument("--force", action="store_true", help="Recompute outputs that already exist")
        p.add_argument("--preset", choices=PRESETS, default=None, help="Model size preset")
    return parser


def _report(ws: Workspace, config_path: Path, seed: Optional[int], preset: Optional[str]) -> Dict[str, Path]:
    configs = _configs_at(config_path, seed, preset)
    frames = []
    for cfg in configs:
        results = ws.experiment_dir(cfg) / "results.csv"
        if not results.exists():
            raise MissingArtifactError(f"missing results for {cfg.name} (seed {cfg.seed}): run evaluate first")
        frames.append(pd.read_csv(results, keep_default_na=False, dtype=RESULT_DTYPES))
    name = config_path.stem if config_path.is_file() else config_path.name
    results = pd.concat(frames, ignore_index=True)
    return reporting.write_report(results, ws.reports_dir(), name, experiments_root=ws.root / "experiments")


def run_command(args: argparse.Namespace) -> int:
    ws = Workspace(Path(args.out_dir), force=args.force)
    if args.command == "grid":
        if not args.config.is_dir():
            raise ConfigError(f"grid needs a directory with manifest.json, got {args.config}")
        run_grid(ws, args.config, args.seed, args.preset)
        paths = _report(ws, args.config, args.seed, args.preset)
        print(f"report: {paths['markdown']}")
        return 0
    if args.command == "report":
        paths = _report(ws, args.config, args.seed, args.preset)
        print(f"report: {paths['markdown']}")
        return 0
    stage = {
        "prepare-data": prepare_data,
        "pretrain": pretrain,
        "synthesize": synthesize,
        "train": train,
        "evaluate": evaluate_experiment,
    }[args.command]
    for cfg in _configs_at(args.config, args.seed, args.preset):
        result = stage(ws, cfg)
        if isinstance(result, pd.DataFrame):
            print(result.to_string(index=False))
        elif result is not None:
            print(f"{cfg.name}: {result}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return run_command(args)
    except (ValueError, RuntimeError, KeyError, FileNotFoundError) as exc:
        cause = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {cause}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
