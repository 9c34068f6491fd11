"""Loss-curve and label-timeline plot emission."""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .datamodel import CLASSES, NUM_CLASSES, FrameLabelSequence

_CMAP = matplotlib.colors.ListedColormap(plt.get_cmap("tab10").colors[:NUM_CLASSES])
_NORM = matplotlib.colors.BoundaryNorm(np.arange(NUM_CLASSES + 1) - 0.5, NUM_CLASSES)


def plot_loss_curves(run_log_epochs: Sequence[dict], path: str) -> None:
    if not run_log_epochs:
        raise ValueError("run log is empty")
    epochs = [e["epoch"] for e in run_log_epochs]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("total_loss", "seg_loss", "mse_loss"):
        ax.plot(epochs, [e[key] for e in run_log_epochs], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_timeline(gt: FrameLabelSequence, pred: FrameLabelSequence, path: str,
                  title: str = "") -> None:
    """Two stacked color bars: ground-truth labels above predictions."""
    rows = np.stack([gt.to_frames(), pred.to_frames()])
    fig, ax = plt.subplots(figsize=(8, 1.6))
    ax.imshow(rows, aspect="auto", interpolation="nearest", cmap=_CMAP, norm=_NORM)
    ax.set_yticks([0, 1], ["GT", "pred"])
    ax.set_xlabel("frame")
    if title:
        ax.set_title(title)
    handles = [plt.Rectangle((0, 0), 1, 1, color=_CMAP(i)) for i in range(NUM_CLASSES)]
    ax.legend(handles, CLASSES, loc="center left", bbox_to_anchor=(1.01, 0.5),
              fontsize="x-small")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def emit_plots(run_log_epochs: Sequence[dict], per_video: Sequence[dict],
               out_dir: str) -> list[str]:
    """Write the loss curve plus one timeline per evaluated video.

    Returns the list of written file paths (deterministic names)."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if run_log_epochs:
        path = os.path.join(out_dir, "loss_curve.png")
        plot_loss_curves(run_log_epochs, path)
        written.append(path)
    for video in per_video:
        gt = FrameLabelSequence(tuple((c, n) for c, n in video["gt_labels"]))
        pred = FrameLabelSequence(tuple((c, n) for c, n in video["predicted_labels"]))
        path = os.path.join(out_dir, f"timeline_{video['id']}.png")
        plot_timeline(gt, pred, path, title=video["id"])
        written.append(path)
    return written
