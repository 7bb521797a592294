"""PNG figures for training logs and confusion matrices (headless)."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}.png"
    fig.savefig(tmp, dpi=100)
    plt.close(fig)
    os.replace(tmp, path)


def loss_curves(rows: list[dict], path, title: str = "training") -> None:
    """Total loss and every ``branch/component`` term against step, plus train PA."""
    steps = [r["step"] for r in rows]
    keys = [k for k in (rows[0] if rows else {}) if "/" in k]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    if rows:
        ax1.plot(steps, [r["loss"] for r in rows], label="total", color="black")
        for k in keys:
            ax1.plot(steps, [r[k] for r in rows], label=k, linewidth=0.8)
        ax2.plot(steps, [r["train_pa"] for r in rows], color="tab:green")
    ax1.set_ylabel("loss")
    ax1.set_yscale("symlog", linthresh=1.0)
    ax1.legend(fontsize=7, loc="upper right")
    ax1.set_title(title)
    ax2.set_ylabel("train pixel accuracy")
    ax2.set_xlabel("step")
    ax2.set_ylim(0, 1)
    fig.tight_layout()
    _save(fig, path)


def confusion_figure(counts: np.ndarray, names, path, title: str = "") -> None:
    """Row-normalised confusion matrix (rows are ground truth)."""
    counts = np.asarray(counts, dtype=np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    norm = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    n = len(names)
    side = max(4.0, 0.35 * n + 2)
    fig, ax = plt.subplots(figsize=(side, side))
    im = ax.imshow(norm, vmin=0, vmax=1, cmap="viridis")
    ax.set_xticks(range(n))
    ax.set_yticks(range(n))
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_yticklabels(names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    _save(fig, path)
