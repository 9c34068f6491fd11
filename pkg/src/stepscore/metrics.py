"""Evaluation metrics: frame accuracy, segmental edit score, segmental
F1 at IoU thresholds, Spearman's rank correlation, and relative L2.

Corpus aggregation: accuracy is micro-averaged over frames, F1 pools
TP/FP/FN across videos, edit averages per-video scores, and the two score
metrics are computed corpus-level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .datamodel import BACKGROUND_ID, FrameLabelSequence

F1_THRESHOLDS = (0.10, 0.25, 0.50)


class MetricError(Exception):
    pass


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    edit: float
    f1: dict[float, float]
    spearman: Optional[float]
    r_l2_x100: Optional[float]

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "edit": self.edit,
            "f1": {f"{t:.2f}": v for t, v in sorted(self.f1.items())},
            "spearman": self.spearman,
            "r_l2_x100": self.r_l2_x100,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table_row(self, label: str = "ours") -> str:
        """One line in the F1@{10,25,50} / Edit / Acc / Spearman / R-l2 order."""
        f1s = " ".join(f"{self.f1[t]:.1f}" for t in F1_THRESHOLDS)
        rho = "-" if self.spearman is None else f"{self.spearman:.3f}"
        rl2 = "-" if self.r_l2_x100 is None else f"{self.r_l2_x100:.2f}"
        return f"{label:<16} {f1s}  {self.edit:5.1f}  {self.acc:5.1f}  {rho:>6}  {rl2:>6}"

    @staticmethod
    def table_header() -> str:
        return f"{'method':<16} F1@{{10,25,50}}   Edit    Acc  Spearman  R-l2(*100)"


def frame_accuracy(pred: FrameLabelSequence, gt: FrameLabelSequence) -> float:
    """Percentage of frames whose class matches; background counts."""
    p, g = pred.to_frames(), gt.to_frames()
    if p.size != g.size:
        raise MetricError(f"length mismatch: pred {p.size} vs gt {g.size} frames")
    return 100.0 * float((p == g).mean())


def _levenshtein(a: Sequence[int], b: Sequence[int]) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def segmental_edit_score(pred: FrameLabelSequence, gt: FrameLabelSequence,
                         include_background: bool = True) -> float:
    """100 * (1 - edit_distance / max(|pred|, |gt|)) over segment label strings."""
    def collapse(seq):
        labels = [cid for cid, _ in seq.runs]
        if not include_background:
            labels = [c for c in labels if c != BACKGROUND_ID]
        return labels

    a, b = collapse(pred), collapse(gt)
    denom = max(len(a), len(b))
    if denom == 0:
        return 100.0
    return 100.0 * (1.0 - _levenshtein(a, b) / denom)


def segmental_f1_counts(pred: FrameLabelSequence, gt: FrameLabelSequence,
                        threshold: float,
                        include_background: bool = False) -> tuple[int, int, int]:
    """Greedy segment matching; returns (tp, fp, fn)."""
    if not (0.0 < threshold < 1.0):
        raise MetricError(f"threshold must be in (0,1), got {threshold}")

    def segs(seq):
        return [s for s in seq.segments() if include_background or s[0] != BACKGROUND_ID]

    pred_segs, gt_segs = segs(pred), segs(gt)
    matched = [False] * len(gt_segs)
    tp = fp = 0
    for cid, ps, pe in pred_segs:
        best_iou, best_idx = 0.0, -1
        for idx, (gcid, gs, ge) in enumerate(gt_segs):
            if gcid != cid:
                continue
            inter = max(0, min(pe, ge) - max(ps, gs))
            union = max(pe, ge) - min(ps, gs)
            iou = inter / union if union > 0 else 0.0
            if iou > best_iou:
                best_iou, best_idx = iou, idx
        if best_idx >= 0 and best_iou >= threshold and not matched[best_idx]:
            matched[best_idx] = True
            tp += 1
        else:
            fp += 1
    fn = matched.count(False)
    return tp, fp, fn


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    """F1 in percent; 0 when precision + recall is 0."""
    if tp + fp == 0 or tp + fn == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def segmental_f1(pred: FrameLabelSequence, gt: FrameLabelSequence, threshold: float,
                 include_background: bool = False) -> float:
    return f1_from_counts(*segmental_f1_counts(pred, gt, threshold, include_background))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(pred_scores: Sequence[float], gt_scores: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties (Pearson on the ranks)."""
    p = np.asarray(pred_scores, dtype=np.float64)
    g = np.asarray(gt_scores, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 1 or p.size < 2:
        raise MetricError("need two equal-length score lists with n >= 2")
    if np.all(p == p[0]) or np.all(g == g[0]):
        raise MetricError("undefined correlation: constant input list")
    rp = _average_ranks(p)
    rg = _average_ranks(g)
    rp -= rp.mean()
    rg -= rg.mean()
    return float((rp @ rg) / np.sqrt((rp @ rp) * (rg @ rg)))


def relative_l2(pred_scores: Sequence[float], gt_scores: Sequence[float],
                s_min: Optional[float] = None, s_max: Optional[float] = None) -> float:
    """Mean squared error relative to the ground-truth score range.

    Reported values in tables are this quantity times 100."""
    p = np.asarray(pred_scores, dtype=np.float64)
    g = np.asarray(gt_scores, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 1 or p.size == 0:
        raise MetricError("need equal-length non-empty score lists")
    s_min = float(g.min()) if s_min is None else s_min
    s_max = float(g.max()) if s_max is None else s_max
    if s_max <= s_min:
        raise MetricError("undefined relative L2: s_max must exceed s_min")
    return float(((np.abs(g - p) / (s_max - s_min)) ** 2).mean())


def aggregate_reports(
    pred_labels: Sequence[FrameLabelSequence],
    gt_labels: Sequence[FrameLabelSequence],
    pred_scores: Optional[Sequence[float]] = None,
    gt_scores: Optional[Sequence[float]] = None,
    include_background_f1: bool = False,
) -> MetricsReport:
    """Corpus-level MetricsReport over per-video label pairs (and scores)."""
    if len(pred_labels) != len(gt_labels) or not pred_labels:
        raise MetricError("need equal non-empty per-video label lists")
    correct = total = 0
    edits = []
    counts = {t: [0, 0, 0] for t in F1_THRESHOLDS}
    for pl, gl in zip(pred_labels, gt_labels):
        p, g = pl.to_frames(), gl.to_frames()
        if p.size != g.size:
            raise MetricError(f"length mismatch: pred {p.size} vs gt {g.size} frames")
        correct += int((p == g).sum())
        total += p.size
        edits.append(segmental_edit_score(pl, gl))
        for t in F1_THRESHOLDS:
            tp, fp, fn = segmental_f1_counts(pl, gl, t, include_background_f1)
            counts[t][0] += tp
            counts[t][1] += fp
            counts[t][2] += fn
    rho = rl2 = None
    if pred_scores is not None and gt_scores is not None:
        rho = spearman(pred_scores, gt_scores)
        rl2 = 100.0 * relative_l2(pred_scores, gt_scores)
    return MetricsReport(
        acc=100.0 * correct / total,
        edit=float(np.mean(edits)),
        f1={t: f1_from_counts(*counts[t]) for t in F1_THRESHOLDS},
        spearman=rho,
        r_l2_x100=rl2,
    )
