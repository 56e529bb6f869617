"""Matplotlib figures written next to experiment results.

All functions render with the non-interactive Agg backend into a file and
close the figure afterwards, so they are safe to call from batch jobs.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataio import ANOMALY  # noqa: E402

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}
COLORS = {"Normal": "#3b6ea8", ANOMALY: "#c8553d", None: "#7f7f7f"}


def figsize(width: float = 5.0, height: float | None = None) -> tuple[float, float]:
    return width, height if height is not None else width * GOLDEN


def new_figure(width: float = 5.0, height: float | None = None, nrows: int = 1, ncols: int = 1):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(nrows, ncols, figsize=figsize(width, height), squeeze=False)
    return fig, ax


def save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path)
    plt.close(fig)
    return path


def latent_scatter(y2d: np.ndarray, labels: Sequence[str | None], path: str | Path,
                   title: str = "Latent segments (top-2 principal components)") -> Path:
    """Scatter of projected segment representations coloured by series label."""
    y2d = np.asarray(y2d, dtype=np.float64)
    fig, ax = new_figure(4.5, 4.0)
    ax = ax[0, 0]
    labels = list(labels)
    for lab in dict.fromkeys(labels):
        idx = [i for i, v in enumerate(labels) if v == lab]
        ax.scatter(y2d[idx, 0], y2d[idx, 1], s=10, alpha=0.7, color=COLORS.get(lab, COLORS[None]),
                   label=str(lab), edgecolors="none")
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.set_title(title)
    ax.legend(frameon=False)
    return save(fig, path)


def convergence_trace(objectives: Sequence[float], path: str | Path, o1: float | None = None,
                      pretrain_losses: Sequence[float] | None = None) -> Path:
    """Surrogate objective per round, with the pretraining curve alongside when given."""
    ncols = 2 if pretrain_losses else 1
    fig, axes = new_figure(4.0 * ncols, 3.0, ncols=ncols)
    ax = axes[0, 0]
    rounds = np.arange(1, len(objectives) + 1)
    ax.plot(rounds, objectives, marker="o", ms=3, color=COLORS["Normal"], label="$o_t$")
    if o1 is not None and np.isfinite(o1):
        ax.axhline(o1, ls="--", lw=1, color="#555555", label="$o_1$ (pretrained)")
    ax.set_xlabel("round t")
    ax.set_ylabel("objective")
    ax.legend(frameon=False)
    if pretrain_losses:
        ax2 = axes[0, 1]
        ax2.plot(np.arange(1, len(pretrain_losses) + 1), pretrain_losses, color="#555555")
        ax2.set_yscale("log")
        ax2.set_xlabel("pretraining epoch")
        ax2.set_ylabel("reconstruction loss")
    return save(fig, path)


def shapelet_plot(values: np.ndarray, breakpoints: Sequence[int], shapelets: Sequence, path: str | Path,
                  title: str = "", truth: tuple[int, int] | None = None) -> Path:
    """A series with its segment boundaries and highlighted anomaly shapelets.

    ``breakpoints`` are 1-based; shapelet spans are 0-based half-open.
    """
    values = np.asarray(values, dtype=np.float64)
    fig, ax = new_figure(5.5, 2.4)
    ax = ax[0, 0]
    x = np.arange(values.size)
    ax.plot(x, values, color="#333333", lw=1)
    for b in list(breakpoints)[1:-1]:
        ax.axvline(b - 0.5, color="#aaaaaa", lw=0.8, ls=":")
    for rank, s in enumerate(shapelets):
        start, stop = s.span
        ax.axvspan(start - 0.5, stop - 0.5, color=COLORS[ANOMALY], alpha=0.35 if rank == 0 else 0.15, lw=0)
    if truth is not None:
        ax.plot([truth[0], truth[1] - 1], [values.min()] * 2, color="#222222", lw=3, solid_capstyle="butt",
                label="injected span")
        ax.legend(frameon=False, loc="upper right")
    ax.set_xlabel("sample")
    if title:
        ax.set_title(title)
    return save(fig, path)


def metric_bars(rows: Sequence[tuple[str, float, float]], path: str | Path, ylabel: str = "AUC") -> Path:
    """Bar chart of ``(label, mean, sd)`` rows."""
    fig, ax = new_figure(max(3.0, 0.8 * len(rows) + 1.5), 3.0)
    ax = ax[0, 0]
    names = [r[0] for r in rows]
    ax.bar(names, [r[1] for r in rows], yerr=[r[2] for r in rows], color=COLORS["Normal"], capsize=3)
    ax.set_ylabel(ylabel)
    ax.set_ylim(0.0, 1.05)
    return save(fig, path)
