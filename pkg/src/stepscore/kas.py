"""Segment selection and the Key Action Scorer.

For each of the six steps the longest contiguous run of that class is
selected, its final-stage features are average-pooled, and two independent
FC + learnable-sigmoid branches produce the step score; the video score is
the sum over steps. A step with no frames scores 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .datamodel import NUM_STEPS, FrameLabelSequence, ModelConfig

NUM_BRANCHES = 2


@dataclass(frozen=True)
class StepAssessment:
    """Per-video assessment: spans, branch scores, step scores and the total."""

    spans: tuple[Optional[tuple[int, int]], ...]
    branch_scores: tuple[Optional[tuple[float, ...]], ...]
    step_scores: tuple[float, ...]
    total: float

    def to_dict(self) -> dict:
        return {
            "spans": [list(s) if s is not None else None for s in self.spans],
            "branch_scores": [list(b) if b is not None else None for b in self.branch_scores],
            "step_scores": list(self.step_scores),
            "total": self.total,
        }


def select_step_segments(labels: FrameLabelSequence) -> tuple[Optional[tuple[int, int]], ...]:
    """Longest maximal run per step class; ties go to the earliest start."""
    best: list[Optional[tuple[int, int]]] = [None] * NUM_STEPS
    for cid, start, end in labels.segments():
        if cid >= NUM_STEPS:
            continue
        if best[cid] is None or (end - start) > (best[cid][1] - best[cid][0]):
            best[cid] = (start, end)
    return tuple(best)


def pool_segment(feature: np.ndarray, span: tuple[int, int]) -> np.ndarray:
    """Arithmetic mean of the feature rows in the half-open span."""
    start, end = span
    if not (0 <= start < end <= feature.shape[0]):
        raise ValueError(f"span {span} outside [0, {feature.shape[0]}) or empty")
    return feature[start:end].mean(axis=0)


def learnable_sigmoid(x: float, steepness: float) -> float:
    """1 / (1 + exp(-steepness * x)); steepness must be positive."""
    if steepness <= 0:
        raise ValueError("steepness must be > 0")
    z = steepness * x
    if z >= 0:
        return float(1.0 / (1.0 + np.exp(-z)))
    e = np.exp(z)
    return float(e / (1.0 + e))


def softplus(x: float) -> float:
    return float(np.logaddexp(0.0, x))


def softplus_inverse(y: float) -> float:
    if y <= 0:
        raise ValueError("softplus output must be positive")
    return float(np.log(np.expm1(y)))


def init_kas_params(cfg: ModelConfig, rng: np.random.Generator,
                    branches: int = NUM_BRANCHES) -> dict[str, np.ndarray]:
    """Independent FC + steepness parameters per (step, branch).

    The steepness is stored pre-softplus so it stays positive under
    unconstrained updates; its initial value recovers the standard sigmoid."""
    d = cfg.hidden_dim
    rho0 = softplus_inverse(cfg.sigmoid_init)
    params = {}
    for i in range(NUM_STEPS):
        for j in range(branches):
            params[f"kas/step{i}/branch{j}/w"] = rng.standard_normal(d) / np.sqrt(d)
            params[f"kas/step{i}/branch{j}/b"] = np.zeros(())
            params[f"kas/step{i}/branch{j}/rho"] = np.full((), rho0)
    return params


def score_step(segment_feature: np.ndarray, params: dict, step: int,
               branches: int = NUM_BRANCHES) -> tuple[tuple[float, ...], float]:
    """Mean over branch scores LS_j(FC_j(feature)) for one step."""
    scores = []
    for j in range(branches):
        w = params[f"kas/step{step}/branch{j}/w"]
        b = params[f"kas/step{step}/branch{j}/b"]
        lam = softplus(float(params[f"kas/step{step}/branch{j}/rho"]))
        u = float(w @ segment_feature + b)
        scores.append(learnable_sigmoid(u, lam))
    return tuple(scores), float(np.mean(scores))


def assess_video(final_feature: np.ndarray, selection_labels: FrameLabelSequence,
                 params: dict, branches: int = NUM_BRANCHES) -> StepAssessment:
    """Score every step from the selected segments of ``selection_labels``."""
    spans = select_step_segments(selection_labels)
    branch_scores: list[Optional[tuple[float, ...]]] = []
    step_scores: list[float] = []
    for i in range(NUM_STEPS):
        if spans[i] is None:
            branch_scores.append(None)
            step_scores.append(0.0)
            continue
        pooled = pool_segment(final_feature, spans[i])
        scores, s_i = score_step(pooled, params, i, branches)
        branch_scores.append(scores)
        step_scores.append(s_i)
    return StepAssessment(
        spans=spans,
        branch_scores=tuple(branch_scores),
        step_scores=tuple(step_scores),
        total=float(sum(step_scores)),
    )


def assess_video_backward(final_feature: np.ndarray, assessment: StepAssessment,
                          params: dict, dtotal: float,
                          branches: int = NUM_BRANCHES):
    """Gradients of ``dtotal * total`` w.r.t. KAS params and the feature rows.

    Segment selection is non-differentiable routing; gradients flow into the
    pooled features and the scorer parameters only."""
    grads = {}
    dfeature = np.zeros_like(final_feature)
    for i in range(NUM_STEPS):
        span = assessment.spans[i]
        if span is None:
            continue
        start, end = span
        pooled = pool_segment(final_feature, span)
        dpooled = np.zeros_like(pooled)
        for j in range(branches):
            w = params[f"kas/step{i}/branch{j}/w"]
            b = params[f"kas/step{i}/branch{j}/b"]
            rho = float(params[f"kas/step{i}/branch{j}/rho"])
            lam = softplus(rho)
            u = float(w @ pooled + b)
            score = learnable_sigmoid(u, lam)
            dscore = dtotal / branches
            dsig = dscore * score * (1.0 - score)
            du = dsig * lam
            dlam = dsig * u
            drho = dlam / (1.0 + np.exp(-rho))  # softplus'
            grads[f"kas/step{i}/branch{j}/w"] = du * pooled
            grads[f"kas/step{i}/branch{j}/b"] = np.asarray(du)
            grads[f"kas/step{i}/branch{j}/rho"] = np.asarray(drho)
            dpooled += du * w
        dfeature[start:end] += dpooled / (end - start)
    return grads, dfeature


# ---------------------------------------------------------------------------
# whole-video regression baseline


def init_baseline_params(input_dim: int, hidden: int,
                         rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "baseline/w1": rng.standard_normal((hidden, input_dim)) * np.sqrt(2.0 / input_dim),
        "baseline/b1": np.zeros(hidden),
        "baseline/w2": rng.standard_normal(hidden) * np.sqrt(2.0 / hidden),
        "baseline/b2": np.zeros(()),
    }


def whole_video_baseline(features: np.ndarray, params: dict) -> float:
    """Average-pool all frames, then a two-layer MLP to a scalar score."""
    pooled = np.asarray(features, dtype=np.float64).mean(axis=0)
    h = np.maximum(params["baseline/w1"] @ pooled + params["baseline/b1"], 0.0)
    return float(params["baseline/w2"] @ h + params["baseline/b2"])


def whole_video_baseline_backward(features: np.ndarray, params: dict,
                                  dout: float) -> dict[str, np.ndarray]:
    pooled = np.asarray(features, dtype=np.float64).mean(axis=0)
    pre = params["baseline/w1"] @ pooled + params["baseline/b1"]
    h = np.maximum(pre, 0.0)
    dh = dout * params["baseline/w2"] * (pre > 0)
    return {
        "baseline/w2": dout * h,
        "baseline/b2": np.asarray(dout, dtype=np.float64),
        "baseline/w1": np.outer(dh, pooled),
        "baseline/b1": dh,
    }
