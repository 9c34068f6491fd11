"""Core domain types: label taxonomy, run-length encoded frame labels,
feature sequences, dataset records and the model configuration."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

STEP_CLASSES = ("step1", "step2", "step3", "step4", "step5", "step6")
BACKGROUND_CLASS = "background"
CLASSES = STEP_CLASSES + (BACKGROUND_CLASS,)
NUM_CLASSES = len(CLASSES)  # 7
NUM_STEPS = len(STEP_CLASSES)  # 6
BACKGROUND_ID = CLASSES.index(BACKGROUND_CLASS)  # 6

# Step attribute codes (per-step degree of standardization).
NE, EN, ES = 0, 1, 2
ATTRIBUTE_NAMES = {NE: "NE", EN: "EN", ES: "ES"}
VALID_ATTRIBUTES = (NE, EN, ES)

ATTENTION_MODES = ("linear", "quadratic-reference", "off")


class ManifestError(Exception):
    """Raised when a manifest file or one of its records is malformed."""


@dataclass(frozen=True)
class FrameLabelSequence:
    """Per-frame class labels stored run-length encoded.

    ``runs`` is a tuple of ``(class_id, length)`` pairs; adjacent runs must
    carry distinct class ids and every length must be positive.
    """

    runs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.runs:
            raise ValueError("label sequence must contain at least one run")
        prev = None
        for cid, length in self.runs:
            if not (0 <= cid < NUM_CLASSES):
                raise ValueError(f"class id {cid} outside taxonomy [0,{NUM_CLASSES})")
            if length < 1:
                raise ValueError(f"run length {length} must be >= 1")
            if prev is not None and cid == prev:
                raise ValueError("adjacent runs must have distinct class ids")
            prev = cid

    @property
    def num_frames(self) -> int:
        return sum(length for _, length in self.runs)

    @staticmethod
    def from_frames(frames: Sequence[int]) -> "FrameLabelSequence":
        """Collapse a per-frame label array into canonical runs."""
        frames = np.asarray(frames, dtype=np.int64)
        if frames.ndim != 1 or frames.size == 0:
            raise ValueError("frames must be a non-empty 1-D sequence")
        boundaries = np.flatnonzero(np.diff(frames)) + 1
        starts = np.concatenate(([0], boundaries))
        ends = np.concatenate((boundaries, [frames.size]))
        runs = tuple((int(frames[s]), int(e - s)) for s, e in zip(starts, ends))
        return FrameLabelSequence(runs)

    def to_frames(self) -> np.ndarray:
        """Expand runs back into a per-frame int array of length T."""
        return np.repeat(
            np.array([cid for cid, _ in self.runs], dtype=np.int64),
            np.array([length for _, length in self.runs], dtype=np.int64),
        )

    def segments(self) -> list[tuple[int, int, int]]:
        """Return maximal runs as (class_id, start, end) half-open spans."""
        out = []
        pos = 0
        for cid, length in self.runs:
            out.append((cid, pos, pos + length))
            pos += length
        return out


@dataclass(frozen=True)
class FeatureSequence:
    """T x D matrix of per-frame features, appearance channels first."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"features must be a T x D matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("features contain NaN or Inf")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class VideoRecord:
    """One manifest entry: labels, per-step attributes and the ground-truth score."""

    id: str
    feature_path: str
    labels: FrameLabelSequence
    attributes: tuple[int, ...]
    gt_score: float


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the segmentation network and scorer."""

    stages: int = 4
    layers_per_stage: int = 10
    hidden_dim: int = 64
    kernel_size: int = 3
    smoothing_tau: float = 4.0
    smoothing_weight: float = 0.15
    sigmoid_init: float = 1.0
    learning_rate: float = 0.0005
    epochs: int = 100
    seed: int = 0
    use_motion_features: bool = True
    attention_mode: str = "linear"
    feature_dim: int = 2048

    def __post_init__(self):
        if self.stages < 2:
            raise ValueError("stages must be >= 2 (attention lives in the later stages)")
        if self.smoothing_tau <= 0:
            raise ValueError("smoothing_tau must be > 0")
        if self.smoothing_weight < 0:
            raise ValueError("smoothing_weight must be >= 0")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd (symmetric padding)")
        if self.feature_dim % 2 != 0:
            raise ValueError("feature_dim must be even (appearance + motion halves)")

    @property
    def input_dim(self) -> int:
        """Network input width: both halves, or the appearance half only."""
        return self.feature_dim if self.use_motion_features else self.feature_dim // 2

    def to_dict(self) -> dict:
        return {
            "stages": self.stages,
            "layers_per_stage": self.layers_per_stage,
            "hidden_dim": self.hidden_dim,
            "kernel_size": self.kernel_size,
            "smoothing_tau": self.smoothing_tau,
            "smoothing_weight": self.smoothing_weight,
            "sigmoid_init": self.sigmoid_init,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "use_motion_features": self.use_motion_features,
            "attention_mode": self.attention_mode,
            "feature_dim": self.feature_dim,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)

    def with_overrides(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)


def _record_from_json(entry: dict, base_dir: str, index: int) -> VideoRecord:
    try:
        vid = entry["id"]
        feature_path = os.path.join(base_dir, entry["feature_path"])
        labels = FrameLabelSequence(tuple((int(c), int(n)) for c, n in entry["labels"]))
        attributes = tuple(int(a) for a in entry["attributes"])
        gt_score = float(entry["gt_score"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"record {index}: malformed entry ({exc})") from exc
    record = VideoRecord(str(vid), feature_path, labels, attributes, gt_score)
    violations = validate_record(record, check_features=False)
    if violations:
        raise ManifestError(f"record '{record.id}': " + "; ".join(violations))
    return record


def validate_record(
    record: VideoRecord,
    features: Optional[FeatureSequence] = None,
    check_features: bool = True,
) -> list[str]:
    """Return every violated invariant of ``record`` (empty list means ok).

    With ``features`` given, cross-checks frame counts and finiteness against
    the in-memory matrix; otherwise, with ``check_features``, validates the
    referenced feature file on disk.
    """
    violations: list[str] = []
    if len(record.attributes) != NUM_STEPS:
        violations.append(
            f"expected {NUM_STEPS} step attributes, got {len(record.attributes)}"
        )
    for i, a in enumerate(record.attributes):
        if a not in VALID_ATTRIBUTES:
            violations.append(f"attribute {i + 1} has invalid code {a}")
    if not (0.0 <= record.gt_score <= 6.0):
        violations.append(f"gt_score out of [0,6]: {record.gt_score}")
    if features is None and check_features:
        from . import featureio

        try:
            header = featureio.read_header(record.feature_path)
        except (OSError, featureio.FeatureIOError) as exc:
            violations.append(f"feature file unreadable: {exc}")
        else:
            if header.num_frames != record.labels.num_frames:
                violations.append(
                    f"feature file has {header.num_frames} frames but labels "
                    f"cover {record.labels.num_frames}"
                )
    elif features is not None:
        if features.num_frames != record.labels.num_frames:
            violations.append(
                f"features have {features.num_frames} frames but labels "
                f"cover {record.labels.num_frames}"
            )
        if not np.all(np.isfinite(features.values)):
            violations.append("features contain NaN or Inf")
    return violations


def load_manifest(path: str, check_features: bool = True) -> list[VideoRecord]:
    """Load and validate a JSON manifest; records are returned sorted by id."""
    base_dir = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, list):
        raise ManifestError(f"{path}: top level must be a list of records")
    records = [_record_from_json(entry, base_dir, i) for i, entry in enumerate(doc)]
    if check_features:
        for record in records:
            violations = validate_record(record, check_features=True)
            if violations:
                raise ManifestError(f"record '{record.id}': " + "; ".join(violations))
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{path}: duplicate record ids")
    return sorted(records, key=lambda r: r.id)


def save_manifest(records: Sequence[dict], path: str) -> None:
    """Write manifest entries (already JSON-shaped dicts) to ``path``."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(list(records), fh, indent=2)
        fh.write("\n")
