"""Static figures: loss curves, per-class score summaries, segmentation overlays."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .train import LOSS_COLUMNS, read_loss_log  # noqa: E402

__all__ = ["CLASS_COLORS", "plot_loss_curve", "plot_scores", "plot_overlay", "colorize"]

# RGB per class id; ids beyond the table cycle through it from index 1.
CLASS_COLORS = np.array([
    [0, 0, 0],        # 0 background
    [230, 57, 70],    # 1 myocardium
    [255, 209, 102],  # 2 tube
    [17, 138, 178],   # 3 cavity
    [6, 214, 160],
    [131, 56, 236],
    [255, 127, 80],
    [140, 140, 140],
], dtype=np.uint8)


def colorize(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.where(labels < len(CLASS_COLORS), labels, 1 + (labels - 1) % (len(CLASS_COLORS) - 1))
    return CLASS_COLORS[idx]


def plot_loss_curve(log_path, out) -> Path:
    rows = read_loss_log(log_path)
    steps = [r["step"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in LOSS_COLUMNS[1:]:
        ax.plot(steps, [r[key] for r in rows], label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_ylim(0, 1)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out = Path(out)
    fig.savefig(out, dpi=100)
    plt.close(fig)
    return out


def plot_scores(reports: Sequence[dict], out, names: Sequence[str] | None = None) -> Path:
    """Per-class foreground DSC/IoU: box plots across reports (bars when only one)."""
    names = list(names or [f"run {i}" for i in range(len(reports))])
    K = reports[0]["num_classes"]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharey=True)
    for ax, key in zip(axes, ("dsc", "iou")):
        data = [[r[key][c] for r in reports] for c in range(1, K)]
        if len(reports) > 1:
            ax.boxplot(data, tick_labels=[str(c) for c in range(1, K)])
        else:
            ax.bar([str(c) for c in range(1, K)], [d[0] for d in data],
                   color=colorize(np.arange(1, K)) / 255.0)
        ax.set_title(key.upper())
        ax.set_xlabel("class")
        ax.set_ylim(0, 1.05)
    axes[0].set_ylabel("score")
    fig.suptitle(", ".join(names))
    fig.tight_layout()
    out = Path(out)
    fig.savefig(out, dpi=100)
    plt.close(fig)
    return out


def plot_overlay(image: np.ndarray, truth: np.ndarray, pred: np.ndarray, out, slice_index: int | None = None,
                 alpha: float = 0.45) -> Path:
    """Ground truth and prediction over the intensity slice, side by side."""
    S = image.shape[0]
    if slice_index is None:
        slice_index = S // 2
    if not 0 <= slice_index < S:
        raise IndexError(f"slice {slice_index} out of range for {S} slices")
    img = image[slice_index]
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    for ax, labels, title in zip(axes, (truth, pred), ("ground truth", "prediction")):
        ax.imshow(img, cmap="gray", vmin=0, vmax=1)
        rgba = np.concatenate([colorize(labels[slice_index]) / 255.0,
                               (labels[slice_index] > 0)[..., None] * alpha], axis=-1)
        ax.imshow(rgba)
        ax.set_title(f"{title}, slice {slice_index}")
        ax.axis("off")
    fig.tight_layout()
    out = Path(out)
    fig.savefig(out, dpi=100)
    plt.close(fig)
    return out
