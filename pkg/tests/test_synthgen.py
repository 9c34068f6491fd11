import json
import os

import numpy as np
import pytest

from stepscore.datamodel import (
    BACKGROUND_ID,
    EN,
    ES,
    NE,
    NUM_STEPS,
    load_manifest,
)
from stepscore.featureio import read_features
from stepscore.synthgen import (
    EN_BLEND,
    GeneratedVideo,
    GeneratorError,
    GeneratorSpec,
    Rubric,
    class_prototypes,
    generate_dataset,
    generate_video,
    rubric_score,
)


def spec(**over):
    base = dict(seed=7, n_videos=8, frames_per_step=(6, 10), background_gap=(2, 4),
                feature_dim=16, class_separation=3.0, noise_sigma=0.5)
    base.update(over)
    return GeneratorSpec(**base)


class TestRubric:
    def test_default_values(self):
        per_step, total = rubric_score([ES] * 6)
        assert per_step == (1.0,) * 6 and total == 6.0
        assert rubric_score([NE] * 6)[1] == 0.0
        assert rubric_score([EN] * 6)[1] == 3.0

    def test_mixed_vector(self):
        per_step, total = rubric_score([NE, EN, ES, ES, EN, NE])
        assert per_step == (0.0, 0.5, 1.0, 1.0, 0.5, 0.0)
        assert total == 3.0

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            rubric_score([ES] * 5)

    def test_monotonicity_enforced(self):
        with pytest.raises(ValueError):
            Rubric(ne=0.5, en=0.5, es=1.0)
        with pytest.raises(ValueError):
            Rubric(ne=0.0, en=0.5, es=1.5)


class TestSpecValidation:
    def test_scalar_triple_broadcasts(self):
        s = spec(attribute_distribution=(0.2, 0.3, 0.5))
        assert len(s.attribute_distribution) == NUM_STEPS
        assert s.attribute_distribution[0] == (0.2, 0.3, 0.5)

    def test_bad_probabilities(self):
        with pytest.raises(ValueError):
            spec(attribute_distribution=(0.5, 0.5, 0.5))
        with pytest.raises(ValueError):
            spec(attribute_distribution=(-0.1, 0.6, 0.5))

    def test_bad_ranges(self):
        with pytest.raises(ValueError):
            spec(frames_per_step=(10, 6))
        with pytest.raises(ValueError):
            spec(noise_sigma=-1.0)
        with pytest.raises(ValueError):
            spec(feature_dim=15)

    def test_forced_attributes_validated(self):
        s = spec(forced_attributes=(ES,) * 6)
        assert s.forced_attributes == (ES,) * 6
        with pytest.raises(ValueError):
            spec(forced_attributes=(ES,) * 5)
        with pytest.raises(ValueError):
            spec(forced_attributes=(7,) * 6)

    def test_json_roundtrip(self):
        s = spec(forced_attributes=(NE, EN, ES, ES, EN, NE))
        assert GeneratorSpec.from_dict(json.loads(json.dumps(s.to_dict()))) == s


class TestPrototypes:
    def test_shapes_and_norms(self):
        s = spec()
        protos = class_prototypes(s)
        assert protos.shape == (7, s.feature_dim)
        assert np.allclose(np.linalg.norm(protos, axis=1), s.class_separation)

    def test_deterministic_given_seed(self):
        assert np.array_equal(class_prototypes(spec()), class_prototypes(spec()))
        assert not np.array_equal(class_prototypes(spec()), class_prototypes(spec(seed=8)))


class TestGenerateVideo:
    def test_structure_matches_attributes(self):
        s = spec(noise_sigma=0.0)
        video = generate_video(s, 0)
        assert isinstance(video, GeneratedVideo)
        present = {cid for cid, _ in video.labels.runs if cid != BACKGROUND_ID}
        expected = {i for i in range(NUM_STEPS) if video.attributes[i] != NE}
        assert present == expected
        # steps appear in ascending order
        order = [cid for cid, _ in video.labels.runs if cid != BACKGROUND_ID]
        assert order == sorted(order)
        assert video.features.num_frames == video.labels.num_frames

    def test_score_matches_rubric(self):
        video = generate_video(spec(), 3)
        assert video.gt_score == pytest.approx(rubric_score(video.attributes)[1])

    def test_deterministic_per_index(self):
        a = generate_video(spec(), 2)
        b = generate_video(spec(), 2)
        assert a.labels == b.labels and a.attributes == b.attributes
        assert np.array_equal(a.features.values, b.features.values)
        c = generate_video(spec(), 3)
        assert not np.array_equal(a.features.values[:1], c.features.values[:1])

    def test_noise_free_frames_sit_on_prototypes(self):
        s = spec(noise_sigma=0.0, forced_attributes=(ES,) * 6)
        video = generate_video(s, 1)
        protos = class_prototypes(s)
        frames = video.labels.to_frames()
        values = video.features.values.astype(np.float64)
        for t, cid in enumerate(frames):
            assert np.allclose(values[t], protos[cid], atol=1e-5)

    def test_en_defect_blends_half_window(self):
        s = spec(noise_sigma=0.0, forced_attributes=(EN,) + (ES,) * 5,
                 frames_per_step=(8, 8))
        video = generate_video(s, 0)
        protos = class_prototypes(s)
        blended = (1 - EN_BLEND) * protos[0] + EN_BLEND * protos[BACKGROUND_ID]
        frames = video.labels.to_frames()
        rows = video.features.values[frames == 0].astype(np.float64)
        on_proto = np.array([np.allclose(r, protos[0], atol=1e-5) for r in rows])
        on_blend = np.array([np.allclose(r, blended, atol=1e-5) for r in rows])
        assert on_proto.sum() == 4 and on_blend.sum() == 4
        assert np.all(on_proto ^ on_blend)
        # the corrupted window is contiguous: either the first or second half
        assert on_blend[:4].all() or on_blend[4:].all()

    def test_out_of_range_index(self):
        with pytest.raises(GeneratorError):
            generate_video(spec(), 99)

    def test_degenerate_spec_raises(self):
        s = spec(forced_attributes=(NE,) * 6, background_gap=(0, 0))
        with pytest.raises(GeneratorError, match="degenerate"):
            generate_video(s, 0)


class TestGenerateDataset:
    def test_split_and_files(self, tmp_path):
        s = spec(n_videos=8, train_fraction=0.75)
        train_path, test_path = generate_dataset(s, str(tmp_path))
        train = load_manifest(train_path)
        test = load_manifest(test_path)
        assert len(train) == 6 and len(test) == 2
        assert {r.id for r in train}.isdisjoint({r.id for r in test})
        for record in train + test:
            back = read_features(record.feature_path)
            assert back.num_frames == record.labels.num_frames
            assert back.dim == s.feature_dim
        saved = json.load(open(os.path.join(tmp_path, "generator_spec.json")))
        assert GeneratorSpec.from_dict(saved) == s

    def test_manifest_scores_match_rubric(self, tmp_path):
        s = spec(n_videos=5)
        train_path, _ = generate_dataset(s, str(tmp_path))
        for record in load_manifest(train_path):
            assert record.gt_score == pytest.approx(rubric_score(record.attributes)[1])

    def test_regeneration_is_byte_identical(self, tmp_path):
        s = spec(n_videos=4)
        p1, _ = generate_dataset(s, str(tmp_path / "a"))
        p2, _ = generate_dataset(s, str(tmp_path / "b"))
        assert open(p1, "rb").read() == open(p2, "rb").read()
        f1 = open(tmp_path / "a" / "features" / "video0000.hhaf", "rb").read()
        f2 = open(tmp_path / "b" / "features" / "video0000.hhaf", "rb").read()
        assert f1 == f2

    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(GeneratorError):
            generate_dataset(spec(n_videos=0), str(tmp_path))
