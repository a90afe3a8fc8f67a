"""Figures written next to the CLI's delimited reports.  Uses the Agg
backend only; nothing here opens a window."""
from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# PNG metadata would otherwise carry the matplotlib version string
_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_sweep(rows: Sequence[Sequence[float]], path, title: str = "") -> None:
    """Precision, recall and F1 against the confidence threshold."""
    t = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k, label in ((1, "precision"), (2, "recall"), (3, "F1")):
        ax.plot(t, [r[k] for r in rows], label=label)
    ax.set_xlabel("confidence threshold")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_compare(rows: Sequence[Mapping[str, object]], path,
                 columns=("mAP@0.50:0.95", "mAP@0.50", "mAP@0.75")) -> None:
    """Grouped bars of the accuracy columns, one group per report row.
    Empty cells are left out rather than drawn as zero."""
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(rows) + 2), 3.5))
    width = 0.8 / len(columns)
    for j, col in enumerate(columns):
        xs = [i + j * width for i, r in enumerate(rows) if r.get(col) not in (None, "")]
        ys = [float(r[col]) for r in rows if r.get(col) not in (None, "")]
        ax.bar(xs, ys, width, label=col)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(rows))])
    ax.set_xticklabels([str(r.get("Model", i)) for i, r in enumerate(rows)], rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_history(history, path) -> None:
    """Training loss (left axis) and validation mAP@0.5 (right axis)."""
    ep = [r.epoch for r in history]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ep, [r.train_loss for r in history], color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(ep, [r.val_map50 for r in history], color="tab:orange")
    ax2.set_ylabel("val mAP@0.5", color="tab:orange")
    ax2.set_ylim(0, 1)
    _save(fig, path)
