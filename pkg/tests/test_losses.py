import numpy as np
import pytest

from stepscore.datamodel import FrameLabelSequence
from stepscore.losses import (
    LossConfig,
    assessment_mse,
    cross_entropy_frames,
    segmentation_loss,
    segmentation_loss_with_grad,
    total_loss,
    truncated_smoothing_loss,
)
from stepscore.segnet import log_softmax


def one_hot(frames, num_classes=7, value=30.0):
    logits = np.full((len(frames), num_classes), -value)
    logits[np.arange(len(frames)), frames] = value
    return logits


class TestCrossEntropy:
    def test_one_hot_correct_is_zero(self):
        frames = [6, 6, 0, 0, 1]
        probs = np.zeros((5, 7))
        probs[np.arange(5), frames] = 1.0
        labels = FrameLabelSequence.from_frames(frames)
        assert cross_entropy_frames(probs, labels) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_is_log7(self):
        labels = FrameLabelSequence.from_frames([0, 1, 2])
        probs = np.full((3, 7), 1 / 7)
        assert cross_entropy_frames(probs, labels) == pytest.approx(np.log(7))

    def test_hand_computation(self):
        labels = FrameLabelSequence.from_frames([0, 1])
        probs = np.full((2, 7), 0.05)
        probs[0, 0] = 0.5
        probs[1, 1] = 0.25
        expected = (np.log(2) + np.log(4)) / 2
        assert cross_entropy_frames(probs, labels) == pytest.approx(expected)

    def test_shape_mismatch(self):
        labels = FrameLabelSequence.from_frames([0, 1, 2])
        with pytest.raises(ValueError):
            cross_entropy_frames(np.full((2, 7), 1 / 7), labels)


class TestTruncatedSmoothing:
    def test_constant_rows_zero(self):
        log_probs = np.tile(np.log(np.full(7, 1 / 7)), (5, 1))
        assert truncated_smoothing_loss(log_probs, tau=4.0) == 0.0

    def test_clamp_rule(self):
        # one transition with delta 10 in one cell, clamped to tau=4
        log_probs = np.zeros((2, 2))
        log_probs[1, 0] = -10.0
        assert truncated_smoothing_loss(log_probs, 4.0) == pytest.approx(16 / 4)

    def test_hand_fixture(self):
        # T=3, C=2, deltas {1, 2, 5, 0}, tau=4 -> (1 + 4 + 16 + 0)/6
        lp = np.array([[0.0, 0.0], [1.0, 2.0], [6.0, 2.0]])
        assert truncated_smoothing_loss(lp, 4.0) == pytest.approx(3.5)

    def test_short_sequence_is_zero(self):
        assert truncated_smoothing_loss(np.zeros((1, 7)), 4.0) == 0.0

    def test_constant_extra_class_invariance(self):
        rng = np.random.default_rng(0)
        lp = rng.standard_normal((6, 4))
        base = truncated_smoothing_loss(lp, 4.0)
        extended = np.concatenate([lp, np.full((6, 1), -2.0)], axis=1)
        # normalizer changes from T*C to T*(C+1); the sum of terms does not
        assert truncated_smoothing_loss(extended, 4.0) * (6 * 5) == pytest.approx(base * (6 * 4))

    def test_per_cell_contribution_capped(self):
        rng = np.random.default_rng(1)
        lp = 10 * rng.standard_normal((8, 3))
        tau = 2.0
        assert truncated_smoothing_loss(lp, tau) <= (8 - 1) * 3 * tau**2 / (8 * 3) + 1e-12


class TestSegmentationLoss:
    def test_zero_weight_reduces_to_cross_entropy(self):
        rng = np.random.default_rng(0)
        frames = [0, 0, 1, 6, 6]
        labels = FrameLabelSequence.from_frames(frames)
        logits = [rng.standard_normal((5, 7)) for _ in range(2)]
        cfg = LossConfig(tau=4.0, weight=0.0)
        expected = sum(
            -log_softmax(l)[np.arange(5), frames].mean() for l in logits
        )
        assert segmentation_loss(logits, labels, cfg) == pytest.approx(expected)

    def test_perfect_constant_prediction_is_zero(self):
        frames = [2] * 6
        labels = FrameLabelSequence.from_frames(frames)
        logits = [one_hot(frames, value=60.0)]
        cfg = LossConfig()
        assert segmentation_loss(logits, labels, cfg) == pytest.approx(0.0, abs=1e-8)

    def test_two_identical_stages_double_one(self):
        rng = np.random.default_rng(2)
        frames = [0, 1, 1, 6]
        labels = FrameLabelSequence.from_frames(frames)
        logits = rng.standard_normal((4, 7))
        cfg = LossConfig()
        one = segmentation_loss([logits], labels, cfg)
        two = segmentation_loss([logits, logits.copy()], labels, cfg)
        assert two == pytest.approx(2 * one)

    def test_gradient_matches_finite_differences(self):
        # The smoothing term deliberately stops gradients at the earlier
        # frame, so the FD oracle perturbs only the later-frame slot: the
        # loss is evaluated with the t-1 log-probabilities frozen.
        rng = np.random.default_rng(3)
        frames = [6, 6, 0, 0, 0, 1, 1, 6]
        labels = FrameLabelSequence.from_frames(frames)
        cfg = LossConfig(tau=1.5, weight=0.15)
        logits = [rng.standard_normal((8, 7)) for _ in range(2)]
        _, grads = segmentation_loss_with_grad(logits, labels, cfg)

        frozen = [log_softmax(l).copy() for l in logits]

        def loss_at(stage_logits):
            total = 0.0
            for s, l in enumerate(stage_logits):
                lp = log_softmax(l)
                frames_arr = labels.to_frames()
                total += -lp[np.arange(8), frames_arr].mean()
                delta = np.abs(lp[1:] - frozen[s][:-1])
                total += cfg.weight * (np.minimum(delta, cfg.tau) ** 2).sum() / (8 * 7)
            return total

        h = 1e-6
        checked = 0
        for s in range(2):
            for _ in range(20):
                i, j = rng.integers(8), rng.integers(7)
                orig = logits[s][i, j]
                logits[s][i, j] = orig + h
                up = loss_at(logits)
                logits[s][i, j] = orig - h
                down = loss_at(logits)
                logits[s][i, j] = orig
                fd = (up - down) / (2 * h)
                assert abs(fd - grads[s][i, j]) <= 1e-4 * max(1.0, abs(fd))
                checked += 1
        assert checked == 40


class TestAssessmentMse:
    def test_identical_zero(self):
        assert assessment_mse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_single_pair(self):
        assert assessment_mse([3.0], [1.0]) == 4.0

    def test_hand_fixture(self):
        assert assessment_mse([1, 2, 3], [1, 1, 5]) == pytest.approx(5 / 3)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            assessment_mse([1.0], [1.0, 2.0])


class TestTotalLoss:
    def test_zero(self):
        assert total_loss(0.0, 0.0) == 0.0

    def test_sum(self):
        assert total_loss(1.5, 0.5) == 2.0

    def test_compositional(self):
        rng = np.random.default_rng(4)
        frames = [0, 1, 6, 6]
        labels = FrameLabelSequence.from_frames(frames)
        logits = [rng.standard_normal((4, 7))]
        cfg = LossConfig()
        seg = segmentation_loss(logits, labels, cfg)
        mse = assessment_mse([2.0, 3.0], [1.0, 5.0])
        assert total_loss(seg, mse) == pytest.approx(seg + mse)


def test_all_losses_nonnegative_random():
    rng = np.random.default_rng(5)
    for _ in range(10):
        frames = rng.integers(0, 7, size=9)
        labels = FrameLabelSequence.from_frames(frames)
        logits = [rng.standard_normal((9, 7)) for _ in range(3)]
        assert segmentation_loss(logits, labels, LossConfig()) >= 0.0
    assert assessment_mse([0.0], [1.0]) >= 0.0
