"""
Visualization helpers.

Note: keep plots readable:
- clear labels
- minimal clutter
- one figure per question (did it train? which row wins?)
"""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from scipy import ndimage


def smooth_loss(loss: Sequence[float], window: int = 50) -> np.ndarray:
    """Centered moving average; the window shrinks to the trace length."""
    x = np.asarray(loss, dtype=np.float64)
    if x.size == 0:
        return x
    return ndimage.uniform_filter1d(x, size=max(1, min(window, x.size)), mode="nearest")


def plot_loss_traces(
    traces: Mapping[str, pd.DataFrame],
    window: int = 50,
    title: Optional[str] = None,
):
    """Smoothed training loss per run against the step count."""
    fig, ax = plt.subplots(figsize=(10, 4))
    for label, trace in traces.items():
        t = trace.sort_values("step")
        ax.plot(t["step"], smooth_loss(t["loss"], window), label=label)
    ax.set_xlabel("Step")
    ax.set_ylabel(f"Loss (moving average, {window} steps)")
    ax.set_title(title or "Training loss")
    if traces:
        ax.legend(loc="best", fontsize="small")
    return fig


def plot_result_bars(table: pd.DataFrame, title: str, metric_label: str = "BLEU"):
    """Grouped bars: one group per row of a result table, one bar per eval set column."""
    columns = [c for c in ("in_domain", "out_of_domain") if c in table.columns]
    fig, ax = plt.subplots(figsize=(10, 4))
    x = np.arange(len(table))
    width = 0.8 / max(len(columns), 1)
    for i, col in enumerate(columns):
        ax.bar(x + i * width, table[col].astype(float), width=width, label=col.replace("_", "-"))
    ax.set_xticks(x + width * (len(columns) - 1) / 2)
    ax.set_xticklabels(table.index.astype(str), rotation=20, ha="right")
    ax.set_ylabel(metric_label)
    ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    return fig


def plot_features(frames: np.ndarray, title: str = "Log-mel features"):
    """Time on x, mel channel on y."""
    fig, ax = plt.subplots(figsize=(8, 3))
    im = ax.imshow(np.asarray(frames).T, origin="lower", aspect="auto")
    ax.set_xlabel("Frame")
    ax.set_ylabel("Mel channel")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    return fig
