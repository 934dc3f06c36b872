import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from instassoc.errors import ArgumentError, ConfigError
from instassoc.sim import (AffineTransform, AugmentationConfig, Scene, SequenceConfig,
                           advance_scene, apply_affine, generate_scene, make_view_pair,
                           photometric_perturb, read_scenes, sample_affine, sample_proposals,
                           scene_from_line, scene_to_line, simulate_sequence,
                           view_pair_from_line, view_pair_to_line, write_scenes)


def _inside(box, tol=1e-9):
    cx, cy, w, h = box
    return cx - w / 2 >= -tol and cx + w / 2 <= 1 + tol and cy - h / 2 >= -tol and \
        cy + h / 2 <= 1 + tol


class TestGenerateScene:
    def test_deterministic(self):
        assert scene_to_line(generate_scene(7, 5, 8)) == scene_to_line(generate_scene(7, 5, 8))

    def test_single_instance(self):
        assert len(generate_scene(7, 1, 8).instances) == 1

    def test_unit_norm_appearances(self):
        s = generate_scene(7, 20, 8)
        norms = [np.linalg.norm(i.appearance) for i in s.instances]
        assert np.allclose(norms, 1.0, atol=1e-9, rtol=0)

    @pytest.mark.parametrize("n,d", [(0, 8), (3, 1)])
    def test_bad_sizes(self, n, d):
        with pytest.raises(ArgumentError):
            generate_scene(0, n, d)

    @given(st.integers(0, 10_000), st.integers(1, 30), st.integers(2, 12))
    def test_invariants(self, seed, n, d):
        s = generate_scene(seed, n, d)
        assert len({i.id for i in s.instances}) == n
        assert all(_inside(i.box) and i.box[2] > 0 and i.box[3] > 0 for i in s.instances)
        assert s.d_raw == d

    def test_scene_rejects_duplicate_ids(self):
        inst = generate_scene(0, 1, 4).instances[0]
        with pytest.raises(ArgumentError):
            Scene(0, (inst, inst))


class TestAdvanceScene:
    def test_zero_steps(self):
        s = generate_scene(3, 6, 4)
        assert scene_to_line(advance_scene(s, 0)) == scene_to_line(s)

    def test_translation(self):
        s = generate_scene(0, 1, 4)
        inst = s.instances[0]
        moved = type(inst)(inst.id, (0.5, 0.5, 0.1, 0.1), inst.appearance, (0.1, 0.0))
        out = advance_scene(Scene(0, (moved,)), 1).instances[0]
        assert out.box[0] == pytest.approx(0.6, abs=1e-12)
        assert out.box[1] == 0.5

    def test_reflection_keeps_boxes_inside(self):
        s = generate_scene(11, 15, 4, max_speed=0.2)
        for _ in range(1000):
            s = advance_scene(s, 1)
            assert all(_inside(i.box) for i in s.instances)

    def test_negative_steps(self):
        with pytest.raises(ArgumentError):
            advance_scene(generate_scene(0, 2, 4), -1)


class TestAffine:
    def test_identity_config_gives_identity(self):
        t = sample_affine(AugmentationConfig.identity(), 5)
        assert np.array_equal(t.matrix, AffineTransform.identity().matrix)

    def test_seeded(self):
        cfg = AugmentationConfig.full()
        assert np.array_equal(sample_affine(cfg, 9).matrix, sample_affine(cfg, 9).matrix)

    def test_rotation_range(self):
        cfg = AugmentationConfig(rotation=0.3)
        for seed in range(1000):
            a = sample_affine(cfg, seed).linear
            assert abs(math.atan2(a[1, 0], a[0, 0])) <= 0.3 + 1e-12
            assert sample_affine(cfg, seed).is_invertible()

    def test_translation_box(self):
        t = AffineTransform(np.array([[1, 0, 0.1], [0, 1, 0.2]], dtype=float))
        assert apply_affine(t, (0.5, 0.5, 0.2, 0.2)) == pytest.approx((0.6, 0.7, 0.2, 0.2))

    def test_scale_about_origin(self):
        t = AffineTransform(np.array([[2, 0, 0], [0, 2, 0]], dtype=float))
        assert apply_affine(t, (0.25, 0.25, 0.1, 0.1)) == pytest.approx((0.5, 0.5, 0.2, 0.2))

    def test_identity_box(self):
        box = (0.3, 0.4, 0.1, 0.2)
        # corners -> hull -> size reassociates one subtraction, nothing more
        assert apply_affine(AffineTransform.identity(), box) == pytest.approx(box, abs=1e-15)

    @pytest.mark.parametrize("kw", [dict(scale=(0.0, 1.0)), dict(flip_prob=1.5),
                                    dict(mixup_weight=(0.5, 1.0)), dict(noise=-0.1)])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigError):
            AugmentationConfig(**kw)

    @given(st.integers(0, 10_000))
    def test_round_trip_contains_center(self, seed):
        t = sample_affine(AugmentationConfig(rotation=0.3, scale=(0.8, 1.2), shear=0.1,
                                             translate=0.1), seed)
        box = (0.5, 0.4, 0.2, 0.1)
        cx, cy, w, h = apply_affine(t.inverse(), apply_affine(t, box))
        assert abs(cx - box[0]) <= w / 2 + 1e-12 and abs(cy - box[1]) <= h / 2 + 1e-12


class TestPhotometric:
    v = np.array([0.3, -0.2, 0.5, 0.1])

    @pytest.mark.parametrize("kind", ["noise", "brightness", "blur"])
    def test_zero_magnitude(self, kind):
        assert np.array_equal(photometric_perturb(self.v, kind, 0.0, 1), self.v)

    def test_brightness(self):
        assert np.array_equal(photometric_perturb(np.zeros(3), "brightness", 0.5, 0),
                              np.full(3, 0.5))

    def test_noise_seeded(self):
        a = photometric_perturb(self.v, "noise", 0.1, 3)
        assert np.array_equal(a, photometric_perturb(self.v, "noise", 0.1, 3))
        assert not np.array_equal(a, self.v)

    def test_blur_preserves_sum(self):
        out = photometric_perturb(self.v, "blur-proxy", 0.7, 0)
        assert out.sum() == pytest.approx(self.v.sum(), abs=1e-12)

    def test_negative_magnitude(self):
        with pytest.raises(ArgumentError):
            photometric_perturb(self.v, "noise", -1.0, 0)


class TestViewPair:
    def test_identity_views(self):
        s = generate_scene(4, 8, 6)
        vp = make_view_pair(s, AugmentationConfig.identity(), 0)
        assert [p.instance_id for p in vp.view1] == [p.instance_id for p in vp.view2]
        assert vp.correspondence == {i: i for i in range(8)}
        for a, b in zip(vp.view1, vp.view2):
            assert a.box == b.box and np.array_equal(a.raw_feature, b.raw_feature)

    def test_seeded(self):
        s = generate_scene(4, 8, 6)
        cfg = AugmentationConfig.full()
        assert view_pair_to_line(make_view_pair(s, cfg, 3)) == \
            view_pair_to_line(make_view_pair(s, cfg, 3))

    def test_cropped_instance_has_no_correspondence(self):
        s = generate_scene(4, 30, 6)
        cfg = AugmentationConfig(crop=(0.3, 0.3))
        vp = make_view_pair(s, cfg, 1)
        ids2 = {p.instance_id for p in vp.view2}
        dropped = [p for p in vp.view1 if p.instance_id not in ids2]
        assert dropped, "a 0.3 crop should remove some of 30 instances"
        for i, p in enumerate(vp.view1):
            assert (i in vp.correspondence) == (p.instance_id in ids2)

    @given(st.integers(0, 5000))
    def test_correspondence_invariants(self, seed):
        s = generate_scene(seed, 12, 6)
        vp = make_view_pair(s, AugmentationConfig.full(), seed)
        assert len(set(vp.correspondence.values())) == len(vp.correspondence)
        for i, j in vp.correspondence.items():
            assert vp.view1[i].instance_id == vp.view2[j].instance_id
        for p in (*vp.view1, *vp.view2):
            assert _inside(p.box) and np.all(np.isfinite(p.raw_feature))
            assert 0 < p.mix_weight <= 1

    def test_serialization_round_trip(self):
        vp = make_view_pair(generate_scene(2, 5, 4), AugmentationConfig.full(), 8)
        back = view_pair_from_line(view_pair_to_line(vp))
        assert view_pair_to_line(back) == view_pair_to_line(vp)


class TestSampleProposals:
    def _pairs(self, n_scenes, n_inst, seed=0):
        return [make_view_pair(generate_scene(seed + k, n_inst, 4),
                               AugmentationConfig.identity(), k) for k in range(n_scenes)]

    def test_cap_not_binding(self):
        assert len(sample_proposals(self._pairs(1, 5), 256, 0)) == 10

    def test_cap_binding(self):
        pairs = self._pairs(6, 25)  # 300 proposals
        assert len(sample_proposals(pairs, 64, 0)) == 64

    def test_cap_too_small(self):
        with pytest.raises(ArgumentError):
            sample_proposals(self._pairs(1, 3), 1, 0)

    def test_positive_always_present(self):
        # 40 singleton-instance pairs: a uniform draw of 4 out of 80 usually has no positive
        pairs = [make_view_pair(generate_scene(k, 1, 4), AugmentationConfig.identity(), k)
                 for k in range(40)]
        for seed in range(1000):
            assert sample_proposals(pairs, 4, seed).has_positive()

    def test_labels_unique_per_pair(self):
        pairs = self._pairs(2, 3)
        b = sample_proposals(pairs, 256, 0)
        assert len(set(b.labels().tolist())) == 6


class TestSequences:
    def test_ground_truth_matches_detections(self):
        seq = simulate_sequence(0, SequenceConfig(n_frames=5))
        assert [t for t, _ in seq.frames] == [1, 2, 3, 4, 5]
        assert seq.gt.ids() == list(range(1, 11))
        for t, dets in seq.frames:
            gt_boxes = sorted(b for _, b in seq.gt.by_frame()[t])
            assert sorted(d.box for d in dets) == gt_boxes

    def test_deterministic(self):
        a = simulate_sequence(5, SequenceConfig(noise=0.1, n_frames=4))
        b = simulate_sequence(5, SequenceConfig(noise=0.1, n_frames=4))
        for (_, da), (_, db) in zip(a.frames, b.frames):
            assert all(np.array_equal(x.embedding, y.embedding) for x, y in zip(da, db))


def test_scene_file_round_trip(tmp_path):
    scenes = [generate_scene(k, 3, 5) for k in range(4)]
    path = tmp_path / "s.jsonl"
    write_scenes(path, scenes)
    back = read_scenes(path)
    assert [scene_to_line(s) for s in back] == [scene_to_line(s) for s in scenes]
    assert scene_to_line(scene_from_line(scene_to_line(scenes[0]))) == scene_to_line(scenes[0])
