"""Training-curve figures rendered from the JSON-lines log."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def plot_training_curves(entries: list[dict], path, title: str | None = None) -> Path:
    """Loss on the left axis, test accuracy on the right; one figure file."""
    path = Path(path)
    epochs = [e["epoch"] for e in entries]
    loss = [e["train_loss"] for e in entries]
    acc = [(e["epoch"], e["test_acc"]) for e in entries if e.get("test_acc") is not None]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.plot(epochs, loss, color="tab:blue", lw=1.2, label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss")
        if acc:
            ax2 = ax.twinx()
            ax2.plot(*zip(*acc), color="tab:orange", lw=1.2, label="test accuracy")
            ax2.set_ylabel("test accuracy")
            ax2.set_ylim(0, 1.02)
            ax2.spines["top"].set_visible(False)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path
