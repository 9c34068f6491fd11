"""Synthetic staged-procedure dataset generator.

Each video alternates background gaps with the six steps in order; a step
marked NE is omitted, and for EN steps one of the two key-action
sub-windows (first or second half of the segment) is blended toward the
background prototype so the quality defect is visible in feature space.
The ground-truth score comes from a fixed rubric over the attributes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import featureio
from .datamodel import (
    EN,
    ES,
    NE,
    NUM_CLASSES,
    NUM_STEPS,
    BACKGROUND_ID,
    FeatureSequence,
    FrameLabelSequence,
    VideoRecord,
    save_manifest,
)

TRAIN_FRACTION = 0.75
EN_BLEND = 0.4


class GeneratorError(Exception):
    pass


@dataclass(frozen=True)
class Rubric:
    """Per-attribute step worth; must be monotone NE < EN < ES within [0,1]."""

    ne: float = 0.0
    en: float = 0.5
    es: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.ne < self.en < self.es <= 1.0):
            raise ValueError("rubric must satisfy 0 <= NE < EN < ES <= 1")

    def value(self, attribute: int) -> float:
        return {NE: self.ne, EN: self.en, ES: self.es}[attribute]


DEFAULT_RUBRIC = Rubric()


def _normalize_distribution(dist) -> tuple[tuple[float, float, float], ...]:
    dist = tuple(dist)
    if len(dist) == 3 and all(np.isscalar(x) for x in dist):
        dist = (dist,) * NUM_STEPS
    elif len(dist) == 1:
        dist = (tuple(dist[0]),) * NUM_STEPS
    if len(dist) != NUM_STEPS:
        raise ValueError("attribute_distribution needs one (NE,EN,ES) triple per step")
    out = []
    for triple in dist:
        triple = tuple(float(x) for x in triple)
        if len(triple) != 3 or any(x < 0 for x in triple):
            raise ValueError("each attribute triple must be three non-negative probabilities")
        if abs(sum(triple) - 1.0) > 1e-9:
            raise ValueError("attribute probabilities must sum to 1 per step")
        out.append(triple)
    return tuple(out)


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int = 0
    n_videos: int = 100
    frames_per_step: tuple[int, int] = (20, 40)
    background_gap: tuple[int, int] = (5, 15)
    feature_dim: int = 2048
    class_separation: float = 3.0
    noise_sigma: float = 0.5
    attribute_distribution: tuple = ((0.2, 0.3, 0.5),)
    forced_attributes: Optional[tuple[int, ...]] = None
    train_fraction: float = TRAIN_FRACTION

    def __post_init__(self):
        if not (0.0 <= self.train_fraction <= 1.0):
            raise ValueError("train_fraction must lie in [0, 1]")
        object.__setattr__(
            self, "attribute_distribution",
            _normalize_distribution(self.attribute_distribution),
        )
        for name in ("frames_per_step", "background_gap"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} range must satisfy 0 <= min <= max")
        if self.frames_per_step[1] < 1:
            raise ValueError("frames_per_step must allow at least one frame")
        if self.class_separation <= 0:
            raise ValueError("class_separation must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.feature_dim < 1 or self.feature_dim % 2 != 0:
            raise ValueError("feature_dim must be a positive even number")
        if self.forced_attributes is not None:
            fa = tuple(int(a) for a in self.forced_attributes)
            if len(fa) != NUM_STEPS or any(a not in (NE, EN, ES) for a in fa):
                raise ValueError("forced_attributes must be six NE/EN/ES codes")
            object.__setattr__(self, "forced_attributes", fa)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_videos": self.n_videos,
            "frames_per_step": list(self.frames_per_step),
            "background_gap": list(self.background_gap),
            "feature_dim": self.feature_dim,
            "class_separation": self.class_separation,
            "noise_sigma": self.noise_sigma,
            "attribute_distribution": [list(t) for t in self.attribute_distribution],
            "forced_attributes": (
                list(self.forced_attributes) if self.forced_attributes else None
            ),
            "train_fraction": self.train_fraction,
        }

    @staticmethod
    def from_dict(d: dict) -> "GeneratorSpec":
        d = dict(d)
        for key in ("frames_per_step", "background_gap", "forced_attributes"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return GeneratorSpec(**d)


@dataclass(frozen=True)
class GeneratedVideo:
    id: str
    labels: FrameLabelSequence
    attributes: tuple[int, ...]
    step_scores: tuple[float, ...]
    gt_score: float
    features: FeatureSequence


def rubric_score(attributes: Sequence[int],
                 rubric: Rubric = DEFAULT_RUBRIC) -> tuple[tuple[float, ...], float]:
    """Per-step scores and their sum for a six-attribute vector."""
    attributes = tuple(attributes)
    if len(attributes) != NUM_STEPS:
        raise ValueError(f"expected {NUM_STEPS} attributes, got {len(attributes)}")
    per_step = tuple(rubric.value(a) for a in attributes)
    return per_step, float(sum(per_step))


def class_prototypes(spec: GeneratorSpec) -> np.ndarray:
    """One unit-direction prototype per class, scaled by class_separation."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(0,)))
    protos = rng.standard_normal((NUM_CLASSES, spec.feature_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    return spec.class_separation * protos


def _video_rng(spec: GeneratorSpec, index: int) -> np.random.Generator:
    # Derived stream per (seed, index): parallel and serial generation agree.
    return np.random.default_rng(
        np.random.SeedSequence(entropy=spec.seed, spawn_key=(1, index))
    )


def generate_video(spec: GeneratorSpec, index: int) -> GeneratedVideo:
    """Deterministically generate one labeled, scored feature sequence."""
    if index < 0 or index >= spec.n_videos:
        raise GeneratorError(f"video index {index} outside [0, {spec.n_videos})")
    rng = _video_rng(spec, index)
    protos = class_prototypes(spec)

    if spec.forced_attributes is not None:
        attributes = spec.forced_attributes
    else:
        attributes = tuple(
            int(rng.choice(3, p=spec.attribute_distribution[i])) for i in range(NUM_STEPS)
        )

    gap_lo, gap_hi = spec.background_gap
    step_lo, step_hi = spec.frames_per_step
    frame_labels: list[np.ndarray] = []
    rows: list[np.ndarray] = []

    def emit(cid: int, length: int, en_defect: bool = False):
        if length == 0:
            return
        block = np.tile(protos[cid], (length, 1))
        if en_defect:
            # Corrupt one of the two key-action sub-windows toward background.
            half = int(rng.integers(2))
            mid = length // 2
            sl = slice(0, mid) if half == 0 else slice(mid, length)
            block[sl] = (1.0 - EN_BLEND) * protos[cid] + EN_BLEND * protos[BACKGROUND_ID]
        if spec.noise_sigma > 0:
            block = block + spec.noise_sigma * rng.standard_normal(block.shape)
        frame_labels.append(np.full(length, cid, dtype=np.int64))
        rows.append(block)

    for i in range(NUM_STEPS):
        emit(BACKGROUND_ID, int(rng.integers(gap_lo, gap_hi + 1)))
        if attributes[i] == NE:
            continue
        emit(i, int(rng.integers(step_lo, step_hi + 1)), en_defect=attributes[i] == EN)
    emit(BACKGROUND_ID, int(rng.integers(gap_lo, gap_hi + 1)))

    if not rows:
        raise GeneratorError(
            "degenerate spec: zero-length video (all steps NE and zero-length gaps)"
        )
    features = FeatureSequence(np.concatenate(rows).astype(np.float32))
    labels = FrameLabelSequence.from_frames(np.concatenate(frame_labels))
    per_step, gt_score = rubric_score(attributes)
    return GeneratedVideo(
        id=f"video{index:04d}",
        labels=labels,
        attributes=attributes,
        step_scores=per_step,
        gt_score=gt_score,
        features=features,
    )


def generate_dataset(spec: GeneratorSpec, out_dir: str) -> tuple[str, str]:
    """Write HHAF feature files plus disjoint train/test manifests.

    Returns (train_manifest_path, test_manifest_path)."""
    if spec.n_videos < 1:
        raise GeneratorError("empty dataset: n_videos must be >= 1")
    feature_dir = os.path.join(out_dir, "features")
    os.makedirs(feature_dir, exist_ok=True)
    n_train = int(spec.n_videos * spec.train_fraction)
    entries: list[dict] = []
    for index in range(spec.n_videos):
        video = generate_video(spec, index)
        rel_path = os.path.join("features", f"{video.id}.hhaf")
        featureio.write_features(video.features, os.path.join(out_dir, rel_path))
        entries.append({
            "id": video.id,
            "feature_path": rel_path,
            "labels": [[cid, length] for cid, length in video.labels.runs],
            "attributes": list(video.attributes),
            "gt_score": video.gt_score,
        })
    train_path = os.path.join(out_dir, "train_manifest.json")
    test_path = os.path.join(out_dir, "test_manifest.json")
    save_manifest(entries[:n_train], train_path)
    save_manifest(entries[n_train:], test_path)
    with open(os.path.join(out_dir, "generator_spec.json"), "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")
    return train_path, test_path
