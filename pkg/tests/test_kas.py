import numpy as np
import pytest
from hypothesis import given, strategies as st

from stepscore.datamodel import NUM_STEPS, FrameLabelSequence, ModelConfig
from stepscore.kas import (
    NUM_BRANCHES,
    assess_video,
    assess_video_backward,
    init_baseline_params,
    init_kas_params,
    learnable_sigmoid,
    pool_segment,
    score_step,
    select_step_segments,
    softplus,
    softplus_inverse,
    whole_video_baseline,
    whole_video_baseline_backward,
)


def cfg(hidden=5):
    return ModelConfig(stages=2, layers_per_stage=1, hidden_dim=hidden,
                       feature_dim=4, epochs=1, seed=0)


class TestSegmentSelection:
    def test_single_run_per_step(self):
        labels = FrameLabelSequence(((6, 3), (0, 4), (6, 2), (1, 5)))
        spans = select_step_segments(labels)
        assert spans[0] == (3, 7)
        assert spans[1] == (9, 14)
        assert all(s is None for s in spans[2:])

    def test_longest_run_wins(self):
        labels = FrameLabelSequence(((2, 3), (6, 1), (2, 7), (6, 1)))
        assert select_step_segments(labels)[2] == (4, 11)

    def test_tie_prefers_earliest(self):
        labels = FrameLabelSequence(((4, 5), (6, 2), (4, 5)))
        assert select_step_segments(labels)[4] == (0, 5)

    def test_background_never_selected(self):
        labels = FrameLabelSequence(((6, 40),))
        assert select_step_segments(labels) == (None,) * NUM_STEPS

    @given(st.lists(st.integers(0, 6), min_size=1, max_size=60))
    def test_selected_span_is_pure_and_maximal(self, frames):
        labels = FrameLabelSequence.from_frames(frames)
        arr = np.array(frames)
        for step, span in enumerate(select_step_segments(labels)):
            if span is None:
                assert step not in frames
                continue
            start, end = span
            assert np.all(arr[start:end] == step)
            assert start == 0 or arr[start - 1] != step
            assert end == len(frames) or arr[end] != step
            # no other run of this class is longer
            best = max(e - s for c, s, e in labels.segments() if c == step)
            assert end - start == best


class TestPooling:
    def test_mean_of_rows(self):
        f = np.array([[0.0, 0.0], [2.0, 4.0], [4.0, 8.0], [9.0, 9.0]])
        assert np.allclose(pool_segment(f, (1, 3)), [3.0, 6.0])

    def test_single_frame_span(self):
        f = np.arange(12.0).reshape(4, 3)
        assert np.array_equal(pool_segment(f, (2, 3)), f[2])

    def test_bad_span_rejected(self):
        f = np.zeros((4, 3))
        for span in [(2, 2), (3, 2), (-1, 2), (2, 5)]:
            with pytest.raises(ValueError):
                pool_segment(f, span)


class TestLearnableSigmoid:
    def test_zero_is_half(self):
        assert learnable_sigmoid(0.0, 1.0) == pytest.approx(0.5)

    def test_unit_steepness_example(self):
        assert learnable_sigmoid(2.0, 1.0) == pytest.approx(1 / (1 + np.exp(-2)))

    def test_steepness_scales_argument(self):
        assert learnable_sigmoid(1.0, 3.0) == pytest.approx(learnable_sigmoid(3.0, 1.0))

    def test_symmetry(self):
        for x in (-5.0, -0.3, 0.7, 4.0):
            assert learnable_sigmoid(x, 2.0) == pytest.approx(
                1.0 - learnable_sigmoid(-x, 2.0)
            )

    def test_extreme_arguments_do_not_overflow(self):
        assert learnable_sigmoid(-1000.0, 5.0) == pytest.approx(0.0, abs=1e-12)
        assert learnable_sigmoid(1000.0, 5.0) == pytest.approx(1.0)

    def test_nonpositive_steepness_rejected(self):
        with pytest.raises(ValueError):
            learnable_sigmoid(0.0, 0.0)


class TestSoftplus:
    def test_inverse_roundtrip(self):
        for y in (0.1, 1.0, 3.7):
            assert softplus(softplus_inverse(y)) == pytest.approx(y)

    def test_unit_initialisation(self):
        c = cfg()
        params = init_kas_params(c, np.random.default_rng(0))
        rho = float(params["kas/step0/branch0/rho"])
        assert softplus(rho) == pytest.approx(c.sigmoid_init)


class TestAssessment:
    def test_absent_steps_score_zero(self):
        c = cfg()
        params = init_kas_params(c, np.random.default_rng(1))
        labels = FrameLabelSequence(((6, 4), (2, 6)))
        feature = np.random.default_rng(2).standard_normal((10, c.hidden_dim))
        out = assess_video(feature, labels, params)
        assert out.step_scores[2] > 0.0
        for i in range(NUM_STEPS):
            if i != 2:
                assert out.step_scores[i] == 0.0
                assert out.branch_scores[i] is None
        assert out.total == pytest.approx(out.step_scores[2])

    def test_total_is_sum_and_bounded(self):
        c = cfg()
        params = init_kas_params(c, np.random.default_rng(3))
        frames = sum(([i] * 5 for i in range(6)), []) + [6] * 4
        labels = FrameLabelSequence.from_frames(frames)
        feature = np.random.default_rng(4).standard_normal((len(frames), c.hidden_dim))
        out = assess_video(feature, labels, params)
        assert out.total == pytest.approx(sum(out.step_scores))
        assert 0.0 <= out.total <= 6.0
        for scores in out.branch_scores:
            assert scores is not None and len(scores) == NUM_BRANCHES

    def test_step_score_is_branch_mean(self):
        c = cfg()
        params = init_kas_params(c, np.random.default_rng(5))
        pooled = np.random.default_rng(6).standard_normal(c.hidden_dim)
        branch, mean = score_step(pooled, params, 3)
        assert mean == pytest.approx(sum(branch) / len(branch))

    def test_branches_are_independent(self):
        c = cfg()
        params = init_kas_params(c, np.random.default_rng(7))
        pooled = np.random.default_rng(8).standard_normal(c.hidden_dim)
        before, _ = score_step(pooled, params, 0)
        params["kas/step0/branch1/w"] = params["kas/step0/branch1/w"] + 1.0
        after, _ = score_step(pooled, params, 0)
        assert after[0] == before[0] and after[1] != before[1]

    def test_selection_labels_control_routing(self):
        # same features, different selection labels -> different spans
        c = cfg()
        params = init_kas_params(c, np.random.default_rng(9))
        feature = np.random.default_rng(10).standard_normal((8, c.hidden_dim))
        gt = FrameLabelSequence(((0, 4), (6, 4)))
        pred = FrameLabelSequence(((6, 4), (0, 4)))
        assert assess_video(feature, gt, params).spans[0] == (0, 4)
        assert assess_video(feature, pred, params).spans[0] == (4, 8)


class TestAssessmentGradients:
    def test_matches_finite_differences(self):
        c = cfg()
        rng = np.random.default_rng(11)
        params = init_kas_params(c, rng)
        frames = [6] * 2 + [0] * 4 + [6] * 2 + [3] * 3 + [5] * 2
        labels = FrameLabelSequence.from_frames(frames)
        feature = rng.standard_normal((len(frames), c.hidden_dim))
        out = assess_video(feature, labels, params)
        dtotal = 1.7
        grads, dfeature = assess_video_backward(feature, out, params, dtotal)

        h = 1e-6
        for key, grad in grads.items():
            arr = params[key]
            for _ in range(5):
                idx = tuple(rng.integers(s) for s in arr.shape) if arr.shape else ()
                orig = arr[idx]
                arr[idx] = orig + h
                up = assess_video(feature, labels, params).total
                arr[idx] = orig - h
                down = assess_video(feature, labels, params).total
                arr[idx] = orig
                fd = dtotal * (up - down) / (2 * h)
                assert abs(fd - np.asarray(grad)[idx]) <= 1e-5 * max(1.0, abs(fd)), key
        for _ in range(20):
            i, j = rng.integers(len(frames)), rng.integers(c.hidden_dim)
            orig = feature[i, j]
            feature[i, j] = orig + h
            up = assess_video(feature, labels, params).total
            feature[i, j] = orig - h
            down = assess_video(feature, labels, params).total
            feature[i, j] = orig
            fd = dtotal * (up - down) / (2 * h)
            assert abs(fd - dfeature[i, j]) <= 1e-5 * max(1.0, abs(fd))

    def test_unselected_frames_get_zero_gradient(self):
        c = cfg()
        rng = np.random.default_rng(12)
        params = init_kas_params(c, rng)
        labels = FrameLabelSequence(((6, 3), (1, 4), (6, 3)))
        feature = rng.standard_normal((10, c.hidden_dim))
        out = assess_video(feature, labels, params)
        _, dfeature = assess_video_backward(feature, out, params, 1.0)
        assert np.all(dfeature[:3] == 0.0) and np.all(dfeature[7:] == 0.0)
        assert np.any(dfeature[3:7] != 0.0)


class TestBaseline:
    def test_pooling_makes_frame_order_irrelevant(self):
        rng = np.random.default_rng(13)
        params = init_baseline_params(6, 4, rng)
        features = rng.standard_normal((15, 6))
        shuffled = features[rng.permutation(15)]
        assert whole_video_baseline(features, params) == pytest.approx(
            whole_video_baseline(shuffled, params)
        )

    def test_gradients_match_fd(self):
        rng = np.random.default_rng(14)
        params = init_baseline_params(5, 4, rng)
        features = rng.standard_normal((9, 5))
        grads = whole_video_baseline_backward(features, params, 2.0)
        h = 1e-6
        for key, grad in grads.items():
            arr = params[key]
            for _ in range(5):
                idx = tuple(rng.integers(s) for s in arr.shape) if arr.shape else ()
                orig = arr[idx]
                arr[idx] = orig + h
                up = whole_video_baseline(features, params)
                arr[idx] = orig - h
                down = whole_video_baseline(features, params)
                arr[idx] = orig
                fd = 2.0 * (up - down) / (2 * h)
                assert abs(fd - np.asarray(grad)[idx]) <= 1e-5 * max(1.0, abs(fd)), key

    def test_param_count_and_shapes(self):
        params = init_baseline_params(8, 3, np.random.default_rng(15))
        assert params["baseline/w1"].shape == (3, 8)
        assert params["baseline/w2"].shape == (3,)
