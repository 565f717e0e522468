import math

import numpy as np
import pytest

from mot3d.geometry import Box3, Pose7, boxes_intersect, rot_z
from mot3d.pose import OutlierParams, fit_camera_pose
from mot3d.simulator import (
    CLASS_HALF_EXTENTS,
    NoiseModel,
    ObjectSpec,
    SceneConfig,
    box_from_pose_and_grid,
    generate_sequence,
    interest_score,
    make_canonical_grid,
    repulsion_weight,
    sample_camera_step,
    sample_object_step,
    sample_scene_config,
    smooth_trajectory,
    surface_points,
    synthesize_detections,
)


def small_config(seed=0, **kw):
    specs = tuple(
        ObjectSpec.create(i, cls, variant=v)
        for i, (cls, v) in enumerate([("chair", 0), ("chair", 1), ("table", 0)])
    )
    defaults = dict(objects=specs, frames=6, seed=seed)
    defaults.update(kw)
    return SceneConfig(**defaults)


class TestRepulsionWeight:
    def test_beyond_threshold_is_one(self):
        assert repulsion_weight(0.6, 0.6) == 1.0
        assert repulsion_weight(2.0, 0.6) == 1.0

    def test_half_threshold_closed_form(self):
        for d_star in (0.4, 0.6, 1.0):
            expected = 1.0 / (2.0 * d_star**2)
            assert repulsion_weight(d_star / 2, d_star, sigma0=1.0) == pytest.approx(expected)

    def test_exhausted_attempts_give_one(self):
        assert repulsion_weight(0.1, 0.6, n=500, n_max=500) == 1.0

    def test_gain_scales_linearly(self):
        base = repulsion_weight(0.2, 0.6, sigma0=1.0)
        assert repulsion_weight(0.2, 0.6, sigma0=3.0) == pytest.approx(3.0 * base)

    def test_nonpositive_distance_rejected(self):
        with pytest.raises(ValueError):
            repulsion_weight(0.0, 0.6)
        with pytest.raises(ValueError):
            repulsion_weight(-0.1, 0.6)


class TestSceneConfig:
    def test_requires_three_objects(self):
        specs = (ObjectSpec.create(0, "chair"), ObjectSpec.create(1, "table"))
        with pytest.raises(ValueError):
            SceneConfig(objects=specs)

    def test_requires_two_frames(self):
        with pytest.raises(ValueError):
            small_config(frames=1)


class TestShapes:
    def test_catalog_shapes_fit_extents(self):
        for cls in CLASS_HALF_EXTENTS:
            spec = ObjectSpec.create(0, cls)
            occ = np.argwhere(spec.canonical_grid)
            assert len(occ) > 50, cls
            centers = (occ + 0.5) / 32 - 0.5
            assert np.all(np.abs(centers) <= spec.canonical_half_extents + 1e-9), cls

    def test_variants_differ(self):
        a = ObjectSpec.create(0, "chair", variant=0)
        b = ObjectSpec.create(1, "chair", variant=1)
        assert not np.array_equal(a.canonical_grid, b.canonical_grid)
        assert np.array_equal(a.half_extents, b.half_extents)
        assert a.scale == b.scale

    def test_table_has_half_turn_symmetry(self):
        # the symmetric smooth-L1 variant for tables assumes this
        g = make_canonical_grid("table", np.array([0.5, 0.35, 0.33]), 0)
        rotated = g[::-1, ::-1, :]
        assert np.array_equal(g, rotated)

    def test_surface_points_are_exposed_cells(self):
        g = np.zeros((32, 32, 32), dtype=bool)
        g[10:14, 10:14, 10:14] = True  # 4^3 solid block: 64 - 8 interior = 56 surface
        pts = surface_points(g)
        assert len(pts) == 56
        assert np.all(np.abs(pts) <= 0.5)


class TestObjectStep:
    def test_zero_bounds_keep_pose(self):
        cfg = small_config(sigma=0.0, phi_obj=0.0)
        spec = cfg.objects[0]
        r0, t0 = rot_z(0.3), np.array([2.0, 2.0, 0.5])
        rng = np.random.default_rng(0)
        r, t, ok = sample_object_step(r0, t0, spec, [], cfg, rng)
        assert ok
        assert np.array_equal(r, r0) and np.array_equal(t, t0)

    def test_wall_repulsion_pushes_away_monte_carlo(self):
        cfg = small_config(sigma=0.1, phi_obj=0.0, d_star=0.6)
        spec = cfg.objects[0]
        t0 = np.array([0.3, 2.0, 0.5])  # 0.3 m from the x=0 wall, inside d*
        r0 = np.eye(3)
        rng = np.random.default_rng(1)
        steps = []
        for _ in range(1000):
            _, t, ok = sample_object_step(r0, t0, spec, [], cfg, rng)
            if ok:
                steps.append(t - t0)
        mean_step = np.mean(steps, axis=0)
        assert mean_step[0] > 0.01  # away from the wall on average

    def test_step_bounded_by_sigma(self):
        cfg = small_config(sigma=0.15, phi_obj=0.05)
        spec = cfg.objects[0]
        rng = np.random.default_rng(2)
        t0 = np.array([0.35, 2.0, 0.5])
        for _ in range(200):
            _, t, ok = sample_object_step(rot_z(0.1), t0, spec, [], cfg, rng)
            if ok:
                assert np.all(np.abs(t - t0) <= cfg.sigma + 1e-12)

    def test_colliding_candidates_rejected(self):
        cfg = small_config(sigma=0.05, phi_obj=0.0)
        spec = cfg.objects[0]
        blocker = Box3(np.array([2.0, 2.0, 0.5]), np.array([1.5, 1.5, 1.5]), 0.0)
        rng = np.random.default_rng(3)
        r, t, ok = sample_object_step(np.eye(3), np.array([2.0, 2.0, 0.5]), spec, [blocker], cfg, rng)
        assert not ok  # start inside the blocker: nothing nearby is free
        assert np.array_equal(t, [2.0, 2.0, 0.5])


class TestCameraStep:
    def test_epsilon_growth_formula(self):
        # step bound at frame 1 with eps0=0.1: 0.1 * (1 + ln 2)
        cfg = small_config(eps0=0.1, phi_cam=0.0, interest_threshold=0.0)
        expected = 0.1 * (1.0 + math.log(2.0))
        assert expected == pytest.approx(0.16931, abs=1e-4)
        cam = cfg.camera.with_extrinsic(np.eye(3), np.zeros(3))
        rng = np.random.default_rng(4)
        for _ in range(50):
            new, ok = sample_camera_step(cam, 1, [], None, cfg, rng)
            assert ok
            assert np.all(np.abs(new.translation - cam.translation) <= expected + 1e-12)

    def test_zero_threshold_accepts_first(self):
        cfg = small_config(interest_threshold=0.0)
        cam = cfg.camera.with_extrinsic(np.eye(3), np.zeros(3))
        rng = np.random.default_rng(5)
        _, ok = sample_camera_step(cam, 1, [], None, cfg, rng)
        assert ok

    def test_objects_behind_camera_hold_pose(self):
        cfg = small_config(interest_threshold=1.0, phi_cam=0.001, eps0=0.001, n_max=50)
        cam = cfg.camera.with_extrinsic(np.eye(3), np.zeros(3))  # looks along +z
        boxes = [Box3(np.array([0.0, 0.0, -20.0]), np.full(3, 0.4), 0.0)]
        rng = np.random.default_rng(6)
        new, ok = sample_camera_step(cam, 1, boxes, [False], cfg, rng)
        assert not ok
        assert np.array_equal(new.translation, cam.translation)


class TestInterestScore:
    def _cam(self):
        cfg = small_config()
        return cfg.camera.with_extrinsic(np.eye(3), np.array([0.0, 0.0, -3.0]))

    def test_no_objects_in_frustum(self):
        cam = self._cam()
        behind = Box3(np.array([0.0, 0.0, -10.0]), np.full(3, 0.4), 0.0)
        assert interest_score(cam, [behind]) == 0.0

    def test_fully_visible_static_unit_weight(self):
        cam = self._cam()
        box = Box3(np.array([0.0, 0.0, 1.0]), np.full(3, 0.3), 0.0)
        assert interest_score(cam, [box]) == pytest.approx(1.0)

    def test_moving_object_doubles(self):
        cam = self._cam()
        box = Box3(np.array([0.0, 0.0, 1.0]), np.full(3, 0.3), 0.0)
        assert interest_score(cam, [box], moved=[True]) == pytest.approx(2.0)

    def test_class_weights(self):
        cam = self._cam()
        box = Box3(np.array([0.0, 0.0, 1.0]), np.full(3, 0.3), 0.0)
        assert interest_score(cam, [box], weights=[0.5]) == pytest.approx(0.5)


class TestSmoothTrajectory:
    def _pose(self, xyz):
        return Pose7(1.0, np.eye(3), np.asarray(xyz, dtype=np.float64))

    def test_endpoints_reproduced_exactly(self):
        rng = np.random.default_rng(7)
        poses = [self._pose(rng.uniform(0, 3, 3)) for _ in range(6)]
        out = smooth_trajectory(poses, samples_per_segment=1)
        assert len(out) == 6
        for a, b in zip(out, poses):
            assert np.array_equal(a.translation, b.translation)
            assert np.array_equal(a.rotation, b.rotation)

    def test_dense_curve_interpolates_waypoints(self):
        rng = np.random.default_rng(8)
        poses = [self._pose(rng.uniform(0, 3, 3)) for _ in range(4)]
        out = smooth_trajectory(poses, samples_per_segment=5)
        assert len(out) == 3 * 5 + 1
        for k, p in enumerate(poses):
            assert np.allclose(out[5 * k].translation, p.translation, atol=1e-12)

    def test_collinear_waypoints_stay_collinear(self):
        direction = np.array([1.0, 2.0, 0.5])
        poses = [self._pose(t * direction) for t in [0.0, 1.0, 2.5, 4.0]]
        out = smooth_trajectory(poses, samples_per_segment=7)
        pts = np.array([p.translation for p in out])
        # distance from the line through origin with the given direction
        unit = direction / np.linalg.norm(direction)
        proj = pts @ unit
        off = pts - proj[:, None] * unit
        assert np.abs(off).max() < 1e-9

    def test_curve_inside_control_polygon_hull(self):
        poses = [self._pose(p) for p in [[0, 0, 0], [1, 0, 0], [1, 1, 0]]]
        out = smooth_trajectory(poses, samples_per_segment=20)
        pts = np.array([p.translation for p in out])
        # hull bound: control points of both segments stay inside [-1/6, 7/6]^2
        assert pts[:, 0].min() > -0.2 and pts[:, 0].max() < 1.2
        assert pts[:, 1].min() > -0.2 and pts[:, 1].max() < 1.2

    def test_single_waypoint_constant(self):
        out = smooth_trajectory([self._pose([1, 2, 3])], samples_per_segment=3)
        assert len(out) == 1

    def test_orientation_interpolation_hits_endpoints(self):
        a = Pose7(1.0, rot_z(0.0), np.zeros(3))
        b = Pose7(2.0, rot_z(1.0), np.ones(3))
        out = smooth_trajectory([a, b], samples_per_segment=4)
        mid = out[2]  # t = 0.5
        assert mid.scale == pytest.approx(1.5)
        assert np.allclose(mid.rotation, rot_z(0.5), atol=1e-12)


class TestGenerateSequence:
    def test_deterministic_same_seed(self):
        a = generate_sequence(small_config(seed=42))
        b = generate_sequence(small_config(seed=42))
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.camera.rotation, fb.camera.rotation)
            assert np.array_equal(fa.camera.translation, fb.camera.translation)
            for pa, pb in zip(fa.poses, fb.poses):
                assert np.array_equal(pa.rotation, pb.rotation)
                assert np.array_equal(pa.translation, pb.translation)
            assert fa.visible == fb.visible

    def test_different_seeds_differ(self):
        a = generate_sequence(small_config(seed=1))
        b = generate_sequence(small_config(seed=2))
        assert not np.array_equal(a.frames[0].poses[0].translation, b.frames[0].poses[0].translation)

    def test_no_collisions_and_room_containment(self):
        for seed in range(5):
            seq = generate_sequence(small_config(seed=seed))
            cfg = seq.config
            for ann in seq.frames:
                boxes = [
                    Box3(ann.poses[k].translation, spec.half_extents,
                         ann.boxes[k].yaw)
                    for k, spec in enumerate(cfg.objects)
                ]
                for i in range(len(boxes)):
                    for j in range(i + 1, len(boxes)):
                        assert not boxes_intersect(boxes[i], boxes[j])

    def test_interest_threshold_met_every_frame(self):
        for seed in range(5):
            seq = generate_sequence(small_config(seed=seed))
            prev = None
            for ann in seq.frames:
                moved = None
                if prev is not None:
                    moved = [
                        bool(np.linalg.norm(p.translation - q.translation) > 0.01)
                        for p, q in zip(ann.poses, prev.poses)
                    ]
                boxes = list(ann.boxes)
                assert interest_score(ann.camera, boxes, moved=moved) >= seq.config.interest_threshold - 1e-9
                prev = ann

    def test_gt_box_derivation_consistent(self):
        seq = generate_sequence(small_config(seed=3))
        ann = seq.frames[0]
        for k, spec in enumerate(seq.config.objects):
            box = box_from_pose_and_grid(ann.poses[k], spec.canonical_grid)
            assert np.array_equal(box.center, ann.boxes[k].center)
            assert np.array_equal(box.half_extents, ann.boxes[k].half_extents)


class TestSynthesizeDetections:
    def test_zero_noise_pose_recovery(self):
        seq = generate_sequence(small_config(seed=11))
        frames = synthesize_detections(seq, NoiseModel.noiseless(), np.random.default_rng(0))
        checked = 0
        for t, dets in enumerate(frames):
            ann = seq.frames[t]
            for det in dets:
                k = det.gt_instance
                cam_pose = fit_camera_pose(
                    det.correspondences, OutlierParams(n_neighbors=10), seed=0
                )
                world = Pose7(1.0, ann.camera.rotation, ann.camera.translation).compose(cam_pose)
                gt = ann.poses[k]
                assert np.abs(world.translation - gt.translation).max() < 1e-6
                assert np.abs(world.rotation - gt.rotation).max() < 1e-6
                assert abs(world.scale - gt.scale) < 1e-6
                checked += 1
        assert checked > 10

    def test_zero_noise_detections_match_visibility(self):
        seq = generate_sequence(small_config(seed=12))
        frames = synthesize_detections(seq, NoiseModel.noiseless(), np.random.default_rng(0))
        for t, dets in enumerate(frames):
            assert sorted(d.gt_instance for d in dets) == sorted(seq.frames[t].visible)
            for d in dets:
                assert d.objectness == 1.0

    def test_full_dropout_no_detections(self):
        seq = generate_sequence(small_config(seed=13))
        noise = NoiseModel(dropout_prob=1.0)
        frames = synthesize_detections(seq, noise, np.random.default_rng(0))
        assert all(len(dets) == 0 for dets in frames)

    def test_outlier_bookkeeping_ransac_exclusion(self):
        # over 100+ detections, the RANSAC consensus excludes nearly all
        # injected outliers
        from mot3d.pose import ransac_alignment_filter

        noise = NoiseModel(
            correspondence_noise_std=0.002, outlier_fraction=0.3, dropout_prob=0.0
        )
        total_outliers = 0
        surviving = 0
        trials = 0
        for seed in (14, 15, 16):
            seq = generate_sequence(small_config(seed=seed, frames=20))
            frames, masks = synthesize_detections(
                seq, noise, np.random.default_rng(seed), with_outlier_masks=True
            )
            for t, dets in enumerate(frames):
                for k, det in enumerate(dets):
                    out_idx = set(masks[(t, k)].tolist())
                    if not out_idx:
                        continue
                    corr = det.correspondences
                    try:
                        kept = ransac_alignment_filter(
                            corr, OutlierParams(ransac_inlier_threshold=0.01), seed=7
                        )
                    except Exception:
                        continue
                    kept_rows = {tuple(r) for r in kept.obs}
                    for idx in out_idx:
                        total_outliers += 1
                        if tuple(corr.obs[idx]) in kept_rows:
                            surviving += 1
                    trials += 1
            if trials >= 100:
                break
        assert trials >= 100
        assert surviving <= 0.05 * total_outliers

    def test_detection_synthesis_deterministic(self):
        seq = generate_sequence(small_config(seed=15))
        noise = NoiseModel()
        a = synthesize_detections(seq, noise, np.random.default_rng(9))
        b = synthesize_detections(seq, noise, np.random.default_rng(9))
        for fa, fb in zip(a, b):
            assert len(fa) == len(fb)
            for da, db in zip(fa, fb):
                assert np.array_equal(da.correspondences.obs, db.correspondences.obs)
                assert np.array_equal(da.grid, db.grid)
                assert da.objectness == db.objectness


class TestSampleSceneConfig:
    def test_always_two_distinct_chairs(self):
        for seed in range(5):
            cfg = sample_scene_config(seed)
            assert cfg.objects[0].class_name == "chair"
            assert cfg.objects[1].class_name == "chair"
            assert cfg.objects[0].variant != cfg.objects[1].variant
            assert 3 <= len(cfg.objects) <= 5

    def test_object_count_bounds_respected(self):
        with pytest.raises(ValueError):
            sample_scene_config(0, k_min=2)
