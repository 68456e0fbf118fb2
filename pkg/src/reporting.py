"""
Result tables, markdown/CSV rendering and ordering checks.

Rows from every (experiment, seed) are aggregated by median over seeds and
laid out as one table per experiment family, with eval sets as columns.
Published reference values are attached as annotations only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .io import ensure_dir
from .visualization import plot_loss_traces, plot_result_bars, smooth_loss

logger = logging.getLogger(__name__)

EVAL_COLUMNS = ("in_domain", "out_of_domain")

TABLES: Dict[str, Tuple[str, Tuple[str, ...]]] = {
    "cascade": ("ASR, MT and cascaded ST", ("ASR", "MT", "ST")),
    "baselines": ("Baseline end-to-end ST and cascaded models",
                  ("Cascaded", "Vanilla", "+ Pre-training", "+ Pre-training + Multi-task")),
    "extra_layers": ("Additional encoder layers on a frozen pretrained encoder", ("0", "1", "2", "3", "4")),
    "synthetic": ("Fine-tuning with synthetic data",
                  ("Real", "Real + TTS synthetic", "Real + MT synthetic", "Real + both synthetic",
                   "Only TTS synthetic", "Only MT synthetic", "Only both synthetic")),
    "unfrozen": ("Fully trainable encoder", ("Real + TTS synthetic", "Only TTS synthetic")),
    "single_speaker": ("Single-speaker TTS",
                       ("Real + one-speaker TTS synthetic", "Only one-speaker TTS synthetic")),
    "unlabeled": ("Unlabeled monolingual data",
                  ("Real", "Real + Synthetic from text", "Real + Synthetic from speech",
                   "Real + Synthetic from both")),
}

# Full-scale published values (in_domain, out_of_domain); not comparable in magnitude.
REFERENCE_VALUES: Dict[Tuple[str, str], Tuple[float, float]] = {
    ("cascade", "ASR"): (13.7, 30.7),
    ("cascade", "MT"): (78.8, 35.6),
    ("cascade", "ST"): (56.9, 21.1),
    ("baselines", "Cascaded"): (56.9, 21.1),
    ("baselines", "Vanilla"): (49.1, 12.1),
    ("baselines", "+ Pre-training"): (54.6, 18.2),
    ("baselines", "+ Pre-training + Multi-task"): (57.1, 21.3),
    ("extra_layers", "0"): (54.5, 19.5),
    ("extra_layers", "1"): (55.7, 18.8),
    ("extra_layers", "2"): (56.1, 19.3),
    ("extra_layers", "3"): (55.9, 19.5),
    ("extra_layers", "4"): (56.1, 19.6),
    ("synthetic", "Real"): (55.9, 19.5),
    ("synthetic", "Real + TTS synthetic"): (59.5, 22.7),
    ("synthetic", "Real + MT synthetic"): (57.9, 26.2),
    ("synthetic", "Real + both synthetic"): (59.5, 26.7),
    ("synthetic", "Only TTS synthetic"): (53.9, 20.8),
    ("synthetic", "Only MT synthetic"): (42.7, 26.9),
    ("synthetic", "Only both synthetic"): (55.6, 27.0),
    ("unfrozen", "Real + TTS synthetic"): (58.7, 21.4),
    ("unfrozen", "Only TTS synthetic"): (35.1, 9.8),
    ("single_speaker", "Real + one-speaker TTS synthetic"): (59.5, 19.5),
    ("single_speaker", "Only one-speaker TTS synthetic"): (38.5, 13.8),
    ("unlabeled", "Real"): (49.1, 12.1),
    ("unlabeled", "Real + Synthetic from text"): (55.9, 19.4),
    ("unlabeled", "Real + Synthetic from speech"): (52.4, 15.3),
    ("unlabeled", "Real + Synthetic from both"): (55.8, 16.9),
}


def aggregate_results(results: pd.DataFrame) -> pd.DataFrame:
    """Median over seeds per (table, row, experiment, eval_set, metric, normalization)."""
    keys = ["table", "row", "experiment", "eval_set", "metric", "normalization"]
    df = results.copy()
    df["value"] = df["value"].astype(float)
    out = df.groupby(keys, dropna=False).agg(value=("value", "median"), seeds=("seed", "nunique")).reset_index()
    return out


def make_result_table(agg: pd.DataFrame, table: str) -> pd.DataFrame:
    """Rows in the family's order; columns in_domain / out_of_domain, metric label and reference values."""
    d = agg[agg["table"] == table].copy()
    if d.empty:
        return pd.DataFrame(columns=["metric", *EVAL_COLUMNS, "seeds", "reference"])
    d["metric"] = d["metric"] + " (" + d["normalization"] + ")"
    wide = d.pivot_table(index=["row", "metric"], columns="eval_set", values="value", aggfunc="first")
    wide = wide.reset_index().set_index("row")
    seeds = d.groupby("row")["seeds"].min()
    wide["seeds"] = seeds.reindex(wide.index).astype(int)
    order = [r for r in TABLES.get(table, ("",))[1] if r in wide.index]
    order += [r for r in wide.index if r not in order]
    wide = wide.loc[order]
    for col in EVAL_COLUMNS:
        if col not in wide.columns:
            wide[col] = np.nan
    wide["reference"] = [
        "{:.1f} / {:.1f}".format(*REFERENCE_VALUES[(table, r)]) if (table, r) in REFERENCE_VALUES else ""
        for r in wide.index
    ]
    return wide[["metric", *EVAL_COLUMNS, "seeds", "reference"]]


# ---------------------------------------------------------------------------
# Ordering checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrderingCheck:
    """lhs > rhs * factor + margin (or lhs < rhs - margin when `less` is set) on each eval set."""

    description: str
    lhs: Tuple[str, str]
    rhs: Tuple[str, str]
    eval_sets: Tuple[str, ...] = EVAL_COLUMNS
    margin: float = 0.0
    factor: float = 1.0
    less: bool = False
    allow_equal: bool = False


ORDERING_CHECKS: Tuple[OrderingCheck, ...] = (
    OrderingCheck("pretraining beats vanilla", ("baselines", "+ Pre-training"), ("baselines", "Vanilla"),
                  margin=2.0),
    OrderingCheck("real + both synthetic beats real", ("synthetic", "Real + both synthetic"), ("synthetic", "Real"),
                  margin=2.0),
    OrderingCheck("only synthetic reaches half of real + both", ("synthetic", "Only both synthetic"),
                  ("synthetic", "Real + both synthetic"), eval_sets=("out_of_domain",), factor=0.5),
    OrderingCheck("frozen encoder beats trainable encoder on TTS-only data", ("synthetic", "Only TTS synthetic"),
                  ("unfrozen", "Only TTS synthetic"), eval_sets=("out_of_domain",)),
    OrderingCheck("multi-speaker TTS beats single-speaker TTS", ("synthetic", "Only TTS synthetic"),
                  ("single_speaker", "Only one-speaker TTS synthetic"), eval_sets=("out_of_domain",)),
    OrderingCheck("cascaded ST trails MT", ("cascade", "ST"), ("cascade", "MT"), less=True),
    OrderingCheck("synthetic from text beats vanilla", ("unlabeled", "Real + Synthetic from text"),
                  ("unlabeled", "Real")),
    OrderingCheck("synthetic from speech does not beat the cascade", ("unlabeled", "Real + Synthetic from speech"),
                  ("cascade", "ST"), less=True, allow_equal=True),
)


def _lookup(agg: pd.DataFrame, key: Tuple[str, str], eval_set: str) -> Optional[float]:
    hit = agg[(agg["table"] == key[0]) & (agg["row"] == key[1]) & (agg["eval_set"] == eval_set)
              & (agg["metric"] == "BLEU")]
    return float(hit["value"].iloc[0]) if len(hit) else None


def directional_checks(agg: pd.DataFrame, checks: Sequence[OrderingCheck] = ORDERING_CHECKS) -> pd.DataFrame:
    """PASS / FAIL per check and eval set; SKIP when a side is missing."""
    rows = []
    for chk in checks:
        for eval_set in chk.eval_sets:
            a = _lookup(agg, chk.lhs, eval_set)
            b = _lookup(agg, chk.rhs, eval_set)
            if a is None or b is None:
                status = "SKIP"
            elif chk.less:
                ok = a <= b - chk.margin if chk.allow_equal else a < b - chk.margin
                status = "PASS" if ok else "FAIL"
            else:
                status = "PASS" if a > b * chk.factor + chk.margin else "FAIL"
            rows.append({"check": chk.description, "eval_set": eval_set, "lhs": a, "rhs": b, "status": status})
    return pd.DataFrame(rows, columns=["check", "eval_set", "lhs", "rhs", "status"])


def loss_decreased(trace: pd.DataFrame, window: int = 50, fraction: float = 0.1) -> bool:
    """Median smoothed loss over the last `fraction` of steps is below that of the first."""
    smooth = smooth_loss(trace.sort_values("step")["loss"].to_numpy(), window)
    n = max(1, int(len(smooth) * fraction))
    return bool(np.median(smooth[-n:]) < np.median(smooth[:n]))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else f"{v:.2f}"
    return str(v)


def to_markdown(df: pd.DataFrame, index_label: str = "") -> str:
    """Pipe table with the index as first column; floats to two decimals, NaN left blank."""
    cols = [index_label] + [str(c) for c in df.columns]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for idx, row in df.iterrows():
        lines.append("| " + " | ".join([str(idx)] + [_fmt(v) for v in row.tolist()]) + " |")
    return "\n".join(lines)


def render_report(agg: pd.DataFrame, checks: pd.DataFrame, title: str) -> str:
    lines = [f"# {title}", ""]
    for slug, (caption, _) in TABLES.items():
        table = make_result_table(agg, slug)
        if table.empty:
            continue
        lines += [f"## {caption}", "", to_markdown(table, "row"), ""]
    if len(checks):
        lines += ["## Ordering checks", "", to_markdown(checks.set_index("check"), "check"), ""]
    lines.append("Reference values are published full-scale numbers, shown for context only.")
    return "\n".join(lines) + "\n"


def write_report(results: pd.DataFrame, out_dir: Path, name: str,
                 experiments_root: Optional[Path] = None) -> Dict[str, Path]:
    """
    Writes:
      <out_dir>/<name>.csv           (median rows)
      <out_dir>/<name>.md            (tables + ordering checks)
      <out_dir>/figures/<name>_*.png (result bars, loss traces)
    Returns dict of paths.
    """
    ensure_dir(out_dir)
    fig_dir = out_dir / "figures"
    ensure_dir(fig_dir)
    agg = aggregate_results(results)
    checks = directional_checks(agg)

    paths = {"csv": out_dir / f"{name}.csv", "markdown": out_dir / f"{name}.md"}
    agg.to_csv(paths["csv"], index=False)
    paths["markdown"].write_text(render_report(agg, checks, name), encoding="utf-8")

    for slug, (caption, _) in TABLES.items():
        table = make_result_table(agg, slug)
        if table.empty:
            continue
        fig = plot_result_bars(table, caption, metric_label=str(table["metric"].iloc[0]))
        paths[f"bars_{slug}"] = fig_dir / f"{name}_{slug}.png"
        fig.savefig(paths[f"bars_{slug}"], dpi=150, bbox_inches="tight")
        plt.close(fig)

    if experiments_root is not None:
        traces = {}
        for exp, fp in results[["experiment", "fingerprint"]].drop_duplicates().itertuples(index=False):
            loss_csv = experiments_root / f"{exp}-{fp}" / "loss.csv"
            if loss_csv.exists():
                traces[exp] = pd.read_csv(loss_csv)
        if traces:
            fig = plot_loss_traces(traces, title=f"{name}: training loss")
            paths["loss"] = fig_dir / f"{name}_loss.png"
            fig.savefig(paths["loss"], dpi=150, bbox_inches="tight")
            plt.close(fig)
            flat = [exp for exp, t in traces.items() if not loss_decreased(t)]
            if flat:
                logger.warning("loss did not decrease for: %s", ", ".join(sorted(flat)))
    logger.info("report written to %s", paths["markdown"])
    return paths
