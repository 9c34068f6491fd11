"""Training loop, evaluation driver, and the paired-variant ablations."""

from __future__ import annotations

import copy
import json
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import featureio, kas, metrics, segnet
from .datamodel import ModelConfig, VideoRecord, load_manifest
from .losses import LossConfig, assessment_mse, segmentation_loss_with_grad, total_loss
from .optim import Adam

ABLATION_MODES = ("motion-features", "attention", "step-vs-whole", "sigmoid")


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train_manifest: str
    out_dir: str
    test_manifest: Optional[str] = None
    teacher_forcing_epochs: int = 10
    eval_every: int = 10
    kas_branches: int = 2
    baseline_hidden: int = 64
    learnable_sigmoid: bool = True

    def to_dict(self) -> dict:
        d = {
            "model": self.model.to_dict(),
            "train_manifest": self.train_manifest,
            "out_dir": self.out_dir,
            "test_manifest": self.test_manifest,
            "teacher_forcing_epochs": self.teacher_forcing_epochs,
            "eval_every": self.eval_every,
            "kas_branches": self.kas_branches,
            "baseline_hidden": self.baseline_hidden,
            "learnable_sigmoid": self.learnable_sigmoid,
        }
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d["model"])
        return RunConfig(**d)

    @staticmethod
    def from_json_file(path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return RunConfig.from_dict(json.load(fh))


@dataclass
class RunLog:
    epochs: list[dict] = field(default_factory=list)

    def append(self, entry: dict) -> None:
        if self.epochs and entry["epoch"] <= self.epochs[-1]["epoch"]:
            raise ValueError("epoch indices must be strictly increasing")
        self.epochs.append(entry)

    def to_dict(self) -> dict:
        return {"epochs": self.epochs}

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def load_dataset(manifest_path: str, cfg: ModelConfig) -> list[tuple[VideoRecord, np.ndarray]]:
    """Load records plus their feature matrices (motion half sliced off when unused)."""
    records = load_manifest(manifest_path)
    out = []
    for record in records:
        try:
            seq = featureio.read_features(record.feature_path)
        except (OSError, featureio.FeatureIOError) as exc:
            raise TrainingError(f"video '{record.id}': {exc}") from exc
        if seq.num_frames != record.labels.num_frames:
            raise TrainingError(
                f"video '{record.id}': {seq.num_frames} feature frames vs "
                f"{record.labels.num_frames} label frames"
            )
        x = seq.values.astype(np.float64)
        if x.shape[1] != cfg.feature_dim:
            raise TrainingError(
                f"video '{record.id}': feature dim {x.shape[1]} != configured "
                f"{cfg.feature_dim}"
            )
        if not cfg.use_motion_features:
            x = x[:, : cfg.feature_dim // 2]
        out.append((record, x))
    return out


def init_all_params(run_cfg: RunConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(run_cfg.model.seed)
    params = segnet.init_network_params(run_cfg.model, rng)
    params.update(kas.init_kas_params(run_cfg.model, rng, run_cfg.kas_branches))
    return params


def expected_param_shapes(run_cfg: RunConfig) -> dict[str, tuple]:
    return {k: tuple(v.shape) for k, v in init_all_params(run_cfg).items()}


def _frozen_keys(params: dict, run_cfg: RunConfig) -> list[str]:
    if run_cfg.learnable_sigmoid:
        return []
    return [k for k in params if k.endswith("/rho")]


def evaluate_params(params: dict, run_cfg: RunConfig,
                    dataset: Sequence[tuple[VideoRecord, np.ndarray]]):
    """Metric report plus per-video assessments; never mutates parameters."""
    cfg = run_cfg.model
    pred_labels, gt_labels, pred_scores, gt_scores, per_video = [], [], [], [], []
    for record, x in dataset:
        out = segnet.network_forward(x, params, cfg)
        assessment = kas.assess_video(
            out.final_feature, out.predicted_labels, params, run_cfg.kas_branches
        )
        pred_labels.append(out.predicted_labels)
        gt_labels.append(record.labels)
        pred_scores.append(assessment.total)
        gt_scores.append(record.gt_score)
        per_video.append({
            "id": record.id,
            "gt_score": record.gt_score,
            "predicted_score": assessment.total,
            "gt_labels": [list(r) for r in record.labels.runs],
            "predicted_labels": [list(r) for r in out.predicted_labels.runs],
            "assessment": assessment.to_dict(),
        })
    try:
        report = metrics.aggregate_reports(pred_labels, gt_labels, pred_scores, gt_scores)
    except metrics.MetricError:
        report = metrics.aggregate_reports(pred_labels, gt_labels)
    return report, per_video


def train(run_cfg: RunConfig):
    """End-to-end joint training; returns (best_checkpoint_path, RunLog).

    One video per optimization step, fixed iteration order, seeded
    initialization: two runs with the same config produce identical
    parameters. The checkpoint with the best eval Spearman is kept."""
    cfg = run_cfg.model
    os.makedirs(run_cfg.out_dir, exist_ok=True)
    train_set = load_dataset(run_cfg.train_manifest, cfg)
    eval_set = (
        load_dataset(run_cfg.test_manifest, cfg) if run_cfg.test_manifest else train_set
    )
    params = init_all_params(run_cfg)
    loss_cfg = LossConfig(tau=cfg.smoothing_tau, weight=cfg.smoothing_weight)
    optimizer = Adam(params, lr=cfg.learning_rate, weight_decay=0.0,
                     frozen=_frozen_keys(params, run_cfg))
    log = RunLog()
    best_rho = -np.inf
    best_params = copy.deepcopy(params)
    meta = {"run_config": run_cfg.to_dict()}

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        seg_sum = mse_sum = 0.0
        teacher_forcing = epoch < run_cfg.teacher_forcing_epochs
        for record, x in train_set:
            out, cache = segnet.network_forward(x, params, cfg, want_cache=True)
            seg_loss, dlogits = segmentation_loss_with_grad(
                out.per_stage_logits, record.labels, loss_cfg
            )
            selection = record.labels if teacher_forcing else out.predicted_labels
            assessment = kas.assess_video(
                out.final_feature, selection, params, run_cfg.kas_branches
            )
            mse = assessment_mse([assessment.total], [record.gt_score])
            step_loss = total_loss(seg_loss, mse)
            if not np.isfinite(step_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, video '{record.id}': "
                    f"seg={seg_loss}, mse={mse}"
                )
            dtotal = 2.0 * (assessment.total - record.gt_score)
            kas_grads, dfeature = kas.assess_video_backward(
                out.final_feature, assessment, params, dtotal, run_cfg.kas_branches
            )
            grads, _ = segnet.network_backward(cache, params, cfg, dlogits, dfeature)
            grads.update(kas_grads)
            optimizer.step(grads)
            seg_sum += seg_loss
            mse_sum += mse
        entry = {
            "epoch": epoch,
            "seg_loss": seg_sum / len(train_set),
            "mse_loss": mse_sum / len(train_set),
            "total_loss": (seg_sum + mse_sum) / len(train_set),
            "wall_time": time.perf_counter() - t0,
        }
        last = epoch == cfg.epochs - 1
        if last or (run_cfg.eval_every and (epoch + 1) % run_cfg.eval_every == 0):
            report, _ = evaluate_params(params, run_cfg, eval_set)
            entry["eval"] = report.to_dict()
            rho = report.spearman if report.spearman is not None else -np.inf
            if rho >= best_rho:
                best_rho = rho
                best_params = copy.deepcopy(params)
        log.append(entry)

    if cfg.epochs == 0:
        best_params = params
    checkpoint_path = os.path.join(run_cfg.out_dir, "checkpoint_best.npz")
    segnet.save_checkpoint(checkpoint_path, meta, best_params)
    segnet.save_checkpoint(os.path.join(run_cfg.out_dir, "checkpoint_final.npz"),
                           meta, params)
    log.save(os.path.join(run_cfg.out_dir, "run_log.json"))
    return checkpoint_path, log


def evaluate_checkpoint(checkpoint_path: str, manifest_path: str):
    """Load a checkpoint, validate tensor shapes, and run the metric suite."""
    meta, params = segnet.load_checkpoint(checkpoint_path)
    run_cfg = RunConfig.from_dict(meta["run_config"])
    segnet.check_param_shapes(params, expected_param_shapes(run_cfg))
    dataset = load_dataset(manifest_path, run_cfg.model)
    return evaluate_params(params, run_cfg, dataset)


# ---------------------------------------------------------------------------
# whole-video baseline training (shares the optimizer and schedule)


def train_baseline(run_cfg: RunConfig):
    """Train the average-pool + two-layer MLP regressor with the MSE loss only."""
    cfg = run_cfg.model
    train_set = load_dataset(run_cfg.train_manifest, cfg)
    rng = np.random.default_rng(cfg.seed)
    params = kas.init_baseline_params(cfg.input_dim, run_cfg.baseline_hidden, rng)
    optimizer = Adam(params, lr=cfg.learning_rate)
    for _ in range(cfg.epochs):
        for record, x in train_set:
            pred = kas.whole_video_baseline(x, params)
            grads = kas.whole_video_baseline_backward(
                x, params, 2.0 * (pred - record.gt_score)
            )
            optimizer.step(grads)
    return params


def evaluate_baseline(params: dict, run_cfg: RunConfig, manifest_path: str):
    dataset = load_dataset(manifest_path, run_cfg.model)
    preds = [kas.whole_video_baseline(x, params) for _, x in dataset]
    gts = [record.gt_score for record, _ in dataset]
    rho = metrics.spearman(preds, gts)
    rl2 = 100.0 * metrics.relative_l2(preds, gts)
    return {"spearman": rho, "r_l2_x100": rl2}


# ---------------------------------------------------------------------------
# ablations


def _timed_train_eval(run_cfg: RunConfig, label: str) -> dict:
    t0 = time.perf_counter()
    checkpoint, _ = train(run_cfg)
    train_time = time.perf_counter() - t0
    manifest = run_cfg.test_manifest or run_cfg.train_manifest
    report, _ = evaluate_checkpoint(checkpoint, manifest)
    row = {"label": label, "train_time": train_time, **report.to_dict()}
    return row


def ablate(run_cfg: RunConfig, mode: str) -> dict:
    """Train paired variants under identical seeds; returns a two-row table."""
    if mode not in ABLATION_MODES:
        raise ValueError(f"mode must be one of {ABLATION_MODES}")
    base_out = run_cfg.out_dir

    def variant(label: str, **overrides) -> RunConfig:
        model_overrides = overrides.pop("model", {})
        model = run_cfg.model.with_overrides(**model_overrides)
        return replace(run_cfg, model=model,
                       out_dir=os.path.join(base_out, label), **overrides)

    if mode == "motion-features":
        rows = [
            _timed_train_eval(variant("with_motion", model={"use_motion_features": True}),
                              "appearance+motion"),
            _timed_train_eval(variant("rgb_only", model={"use_motion_features": False}),
                              "appearance only"),
        ]
    elif mode == "attention":
        rows = [
            _timed_train_eval(variant("linear", model={"attention_mode": "linear"}),
                              "linear attention"),
            _timed_train_eval(
                variant("quadratic", model={"attention_mode": "quadratic-reference"}),
                "quadratic attention"),
        ]
    elif mode == "sigmoid":
        rows = [
            _timed_train_eval(variant("learnable", learnable_sigmoid=True),
                              "learnable sigmoid"),
            _timed_train_eval(variant("fixed", learnable_sigmoid=False),
                              "fixed sigmoid"),
        ]
    else:  # step-vs-whole
        framework = _timed_train_eval(variant("framework"), "step-based framework")
        t0 = time.perf_counter()
        baseline_cfg = variant("baseline")
        baseline_params = train_baseline(baseline_cfg)
        manifest = baseline_cfg.test_manifest or baseline_cfg.train_manifest
        scores = evaluate_baseline(baseline_params, baseline_cfg, manifest)
        baseline_row = {"label": "whole-video baseline",
                        "train_time": time.perf_counter() - t0, **scores}
        rows = [framework, baseline_row]

    result = {"mode": mode, "rows": rows}
    os.makedirs(base_out, exist_ok=True)
    with open(os.path.join(base_out, f"ablation_{mode}.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    return result
