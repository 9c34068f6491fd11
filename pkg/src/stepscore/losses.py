"""Training objectives: frame-wise cross-entropy, truncated temporal
smoothing of log-probabilities, the per-stage segmentation loss, the
assessment MSE, and their unweighted joint total."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .datamodel import FrameLabelSequence
from .segnet import log_softmax, softmax

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    tau: float = 4.0
    weight: float = 0.15
    stage_weights: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")


def cross_entropy_frames(probs: np.ndarray, labels: FrameLabelSequence) -> float:
    """(1/T) sum over frames of -log p(correct class)."""
    frames = labels.to_frames()
    if probs.ndim != 2 or probs.shape[0] != frames.size:
        raise ValueError(
            f"probability matrix {probs.shape} does not match {frames.size} frames"
        )
    picked = np.clip(probs[np.arange(frames.size), frames], PROB_FLOOR, None)
    return float(-np.log(picked).mean())


def truncated_smoothing_loss(log_probs: np.ndarray, tau: float) -> float:
    """Mean over (t, c) of the clamped squared log-probability difference.

    The 1/(T*C) normalizer counts all T frames even though only T-1
    transitions contribute."""
    num_frames, num_classes = log_probs.shape
    if num_frames < 2:
        return 0.0
    delta = np.abs(np.diff(log_probs, axis=0))
    clamped = np.minimum(delta, tau)
    return float((clamped**2).sum() / (num_frames * num_classes))


def segmentation_loss(per_stage_logits: Sequence[np.ndarray],
                      labels: FrameLabelSequence, cfg: LossConfig) -> float:
    """Sum over stages of cross-entropy + weight * smoothing loss."""
    loss, _ = segmentation_loss_with_grad(per_stage_logits, labels, cfg)
    return loss


def segmentation_loss_with_grad(per_stage_logits: Sequence[np.ndarray],
                                labels: FrameLabelSequence, cfg: LossConfig):
    """Returns (loss, per-stage gradient w.r.t. the logits).

    The smoothing term's gradient flows only through the later frame of each
    transition (the earlier frame is treated as a constant)."""
    if not per_stage_logits:
        raise ValueError("need at least one stage")
    frames = labels.to_frames()
    weights = cfg.stage_weights or (1.0,) * len(per_stage_logits)
    if len(weights) != len(per_stage_logits):
        raise ValueError("stage_weights length must match the stage count")
    total = 0.0
    grads = []
    for logits, sw in zip(per_stage_logits, weights):
        num_frames, num_classes = logits.shape
        if num_frames != frames.size:
            raise ValueError(
                f"logits cover {num_frames} frames but labels cover {frames.size}"
            )
        logp = log_softmax(logits)
        probs = softmax(logits)

        ce = float(-logp[np.arange(num_frames), frames].mean())
        dlogp = np.zeros_like(logp)
        dlogp[np.arange(num_frames), frames] = -1.0 / num_frames

        tmse = 0.0
        if num_frames >= 2:
            diff = logp[1:] - logp[:-1]
            delta = np.abs(diff)
            clamped = np.minimum(delta, cfg.tau)
            tmse = float((clamped**2).sum() / (num_frames * num_classes))
            active = delta < cfg.tau
            dlogp[1:] += (
                cfg.weight * 2.0 / (num_frames * num_classes)
            ) * clamped * np.sign(diff) * active

        total += sw * (ce + cfg.weight * tmse)
        # chain rule through log_softmax: dlogits = dlogp - probs * sum(dlogp)
        dlogits = dlogp - probs * dlogp.sum(axis=1, keepdims=True)
        grads.append(sw * dlogits)
    return total, grads


def assessment_mse(predicted: Sequence[float], gt: Sequence[float]) -> float:
    """(1/n) sum of squared score errors."""
    predicted = np.asarray(predicted, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if predicted.shape != gt.shape or predicted.ndim != 1 or predicted.size == 0:
        raise ValueError(
            f"score lists must be equal-length and non-empty, got "
            f"{predicted.shape} vs {gt.shape}"
        )
    return float(((predicted - gt) ** 2).mean())


def total_loss(seg_loss: float, mse_loss: float) -> float:
    """Unweighted sum of the segmentation and assessment objectives."""
    return seg_loss + mse_loss
