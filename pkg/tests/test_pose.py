import numpy as np
import pytest

from mot3d.errors import DegenerateGeometryError, PoseFailureError
from mot3d.geometry import CameraModel, Pose7
from mot3d.pose import (
    Correspondences,
    OutlierParams,
    estimate_pose,
    filter_correspondences,
    fit_camera_pose,
    ransac_alignment_filter,
    statistical_outlier_filter,
    umeyama_fit,
    umeyama_residual,
    umeyama_residual_grad,
)
from test_geometry import random_pose, random_rotation


def rotation_angle(r):
    # quaternion-based log resolves tiny angles; arccos of the trace cannot
    from mot3d.geometry import rotation_log

    return np.linalg.norm(rotation_log(np.asarray(r)))


def make_exact(rng, n=100, scale_range=(0.5, 2.0)):
    pose = random_pose(rng, scale_range)
    noc = rng.uniform(-0.5, 0.5, (n, 3))
    return Correspondences(noc, pose.apply(noc)), pose


class TestStatisticalFilter:
    def test_far_point_removed_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        sphere = rng.normal(size=(100, 3))
        sphere /= np.linalg.norm(sphere, axis=1, keepdims=True)
        cloud = np.vstack([sphere, [[100.0, 0.0, 0.0]]])
        params = OutlierParams(n_neighbors=20, std_ratio=2.0)
        filtered, kept = statistical_outlier_filter(cloud, params)

        # brute-force oracle
        d = np.linalg.norm(cloud[:, None, :] - cloud[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        mean_nn = np.sort(d, axis=1)[:, :20].mean(axis=1)
        thr = mean_nn.mean() + 2.0 * mean_nn.std()
        expected = np.flatnonzero(mean_nn <= thr)
        assert np.array_equal(kept, expected)
        assert 100 not in kept
        assert len(kept) == 100
        assert np.all(np.diff(kept) > 0)
        assert np.allclose(filtered, cloud[kept])

    def test_identical_points_all_kept(self):
        cloud = np.ones((40, 3))
        params = OutlierParams(n_neighbors=10)
        _, kept = statistical_outlier_filter(cloud, params)
        assert len(kept) == 40

    def test_small_cloud_unchanged_with_warning(self):
        cloud = np.random.default_rng(1).normal(size=(20, 3))
        params = OutlierParams(n_neighbors=20)
        with pytest.warns(UserWarning):
            filtered, kept = statistical_outlier_filter(cloud, params)
        assert np.array_equal(filtered, cloud)
        assert np.array_equal(kept, np.arange(20))


class TestRansac:
    def test_no_outliers_all_retained(self):
        rng = np.random.default_rng(2)
        corr, _ = make_exact(rng, n=50)
        out = ransac_alignment_filter(corr, OutlierParams(), seed=0)
        assert len(out) == 50

    def test_35_inliers_15_outliers(self):
        rng = np.random.default_rng(3)
        pose = random_pose(rng)
        noc_in = rng.uniform(-0.5, 0.5, (35, 3))
        obs_in = pose.apply(noc_in)
        noc_out = rng.uniform(-0.5, 0.5, (15, 3))
        obs_out = pose.apply(noc_out) + rng.uniform(0.2, 1.0, (15, 3)) * rng.choice(
            [-1.0, 1.0], (15, 3)
        )
        order = rng.permutation(50)
        noc = np.vstack([noc_in, noc_out])[order]
        obs = np.vstack([obs_in, obs_out])[order]
        is_inlier = (order < 35)

        out = ransac_alignment_filter(
            Correspondences(noc, obs), OutlierParams(ransac_inlier_threshold=0.01), seed=5
        )
        assert len(out) == 35
        # oracle: the ground-truth transform identifies exactly the inliers
        err = np.linalg.norm(obs - pose.apply(noc), axis=1)
        assert np.array_equal(np.flatnonzero(is_inlier), np.flatnonzero(err < 1e-9))
        retained = {tuple(p) for p in out.noc}
        expected = {tuple(p) for p in noc[is_inlier]}
        assert retained == expected

    def test_too_few_correspondences(self):
        corr = Correspondences(np.zeros((2, 3)), np.zeros((2, 3)))
        with pytest.raises(PoseFailureError):
            ransac_alignment_filter(corr, OutlierParams(), seed=0)

    def test_subset_and_determinism(self):
        rng = np.random.default_rng(4)
        corr, _ = make_exact(rng, n=40)
        noisy = Correspondences(corr.noc, corr.obs + rng.normal(0, 0.02, corr.obs.shape))
        a = ransac_alignment_filter(noisy, OutlierParams(), seed=11)
        b = ransac_alignment_filter(noisy, OutlierParams(), seed=11)
        assert np.array_equal(a.noc, b.noc) and np.array_equal(a.obs, b.obs)
        pairs = {tuple(np.concatenate([x, y])) for x, y in zip(noisy.noc, noisy.obs)}
        for x, y in zip(a.noc, a.obs):
            assert tuple(np.concatenate([x, y])) in pairs

    def test_degenerate_consensus_fails(self):
        rng = np.random.default_rng(5)
        noc = rng.uniform(-0.5, 0.5, (10, 3))
        obs = rng.uniform(-10.0, 10.0, (10, 3)) + 20.0  # no consistent similarity
        with pytest.raises(PoseFailureError):
            ransac_alignment_filter(
                Correspondences(noc, obs),
                OutlierParams(ransac_inlier_threshold=1e-4, min_correspondences=4),
                seed=0,
            )


class TestUmeyama:
    def test_identity(self):
        rng = np.random.default_rng(6)
        noc = rng.uniform(-0.5, 0.5, (30, 3))
        pose = umeyama_fit(Correspondences(noc, noc))
        assert abs(pose.scale - 1.0) < 1e-12
        assert np.abs(pose.rotation - np.eye(3)).max() < 1e-9
        assert np.abs(pose.translation).max() < 1e-12
        assert umeyama_residual(Correspondences(noc, noc), pose) < 1e-20

    def test_random_exact_recovery(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            corr, pose = make_exact(rng, n=100)
            fit = umeyama_fit(corr)
            assert rotation_angle(fit.rotation.T @ pose.rotation) < 1e-9
            assert np.abs(fit.translation - pose.translation).max() < 1e-9
            assert abs(fit.scale - pose.scale) / pose.scale < 1e-12

    def test_reflection_trap_matches_bruteforce_sign_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            noc = rng.uniform(-0.5, 0.5, (60, 3))
            reflect = random_rotation(rng) @ np.diag([1.0, 1.0, -1.0])
            obs = 1.3 * noc @ reflect.T + rng.uniform(-1, 1, 3)
            corr = Correspondences(noc, obs)
            fit = umeyama_fit(corr)
            assert np.linalg.det(fit.rotation) > 0.0
            residual = umeyama_residual(corr, fit)

            # oracle: brute force over all proper-rotation sign corrections
            mu_n, mu_o = noc.mean(0), obs.mean(0)
            cov = (obs - mu_o).T @ (noc - mu_n) / len(noc)
            var = ((noc - mu_n) ** 2).sum() / len(noc)
            u, s, vt = np.linalg.svd(cov)
            best = np.inf
            for bits in range(8):
                signs = [1 if bits & (1 << k) == 0 else -1 for k in range(3)]
                d = np.diag(signs)
                r = u @ d @ vt
                if np.linalg.det(r) < 0:
                    continue
                c = (s * np.diagonal(d)).sum() / var
                if c <= 0:
                    continue
                t = mu_o - c * r @ mu_n
                cand = Pose7(c, r, t)
                best = min(best, umeyama_residual(corr, cand))
            assert residual == pytest.approx(best, rel=1e-9)

    def test_collinear_degenerate(self):
        t = np.linspace(0.0, 1.0, 10)
        noc = np.column_stack([t, 2 * t, -t])
        with pytest.raises(DegenerateGeometryError):
            umeyama_fit(Correspondences(noc, noc + 1.0))

    def test_coincident_degenerate(self):
        noc = np.zeros((10, 3))
        with pytest.raises(DegenerateGeometryError):
            umeyama_fit(Correspondences(noc, noc))

    def test_too_few_points(self):
        with pytest.raises(PoseFailureError):
            umeyama_fit(Correspondences(np.zeros((2, 3)), np.zeros((2, 3))))

    def test_residual_not_worse_than_identity(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            noc = rng.uniform(-0.5, 0.5, (40, 3))
            obs = rng.normal(size=(40, 3))
            corr = Correspondences(noc, obs)
            try:
                fit = umeyama_fit(corr)
            except DegenerateGeometryError:
                continue
            assert umeyama_residual(corr, fit) <= umeyama_residual(
                corr, Pose7.identity()
            ) + 1e-9

    def test_equivariance_under_world_transform(self):
        rng = np.random.default_rng(10)
        corr, _ = make_exact(rng, n=50)
        noisy = Correspondences(corr.noc, corr.obs + rng.normal(0, 0.01, corr.obs.shape))
        base = umeyama_fit(noisy)
        w = random_pose(rng)
        moved = Correspondences(noisy.noc, w.apply(noisy.obs))
        lifted = umeyama_fit(moved)
        expected = w.compose(base)
        assert rotation_angle(lifted.rotation.T @ expected.rotation) < 1e-9
        assert np.abs(lifted.translation - expected.translation).max() < 1e-9
        assert abs(lifted.scale - expected.scale) / expected.scale < 1e-9

    def test_scale_positive(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            noc = rng.uniform(-0.5, 0.5, (20, 3))
            obs = rng.normal(size=(20, 3))
            try:
                fit = umeyama_fit(Correspondences(noc, obs))
            except DegenerateGeometryError:
                continue
            assert fit.scale > 0.0


class TestResidualGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        h = 1e-6
        for _ in range(5):
            noc = rng.uniform(-0.5, 0.5, (25, 3))
            pose = random_pose(rng)
            obs = pose.apply(noc) + rng.normal(0, 0.05, (25, 3))
            corr = Correspondences(noc, obs)
            value, d_obs, d_noc, _ = umeyama_residual_grad(corr)

            def full(noc_arr, obs_arr):
                c = Correspondences(noc_arr, obs_arr)
                return umeyama_residual(c, umeyama_fit(c))

            for _ in range(8):
                i = rng.integers(25)
                j = rng.integers(3)
                for arr, grad in ((obs, d_obs), (noc, d_noc)):
                    plus = arr.copy()
                    plus[i, j] += h
                    minus = arr.copy()
                    minus[i, j] -= h
                    if arr is obs:
                        fd = (full(noc, plus) - full(noc, minus)) / (2 * h)
                    else:
                        fd = (full(plus, obs) - full(minus, obs)) / (2 * h)
                    rel = abs(grad[i, j] - fd) / max(abs(grad[i, j]), abs(fd), 1e-6)
                    assert rel < 1e-4


class TestEstimatePose:
    def test_identity_extrinsic_equals_camera_pose(self):
        rng = np.random.default_rng(13)
        corr, pose = make_exact(rng, n=80)
        cam = CameraModel(fx=500, fy=500, cx=320, cy=240)
        det = type("D", (), {"correspondences": corr})()
        world = estimate_pose(det, cam, OutlierParams(n_neighbors=10), seed=0)
        assert rotation_angle(world.rotation.T @ pose.rotation) < 1e-9
        assert np.abs(world.translation - pose.translation).max() < 1e-9

    def test_extrinsic_left_composition(self):
        rng = np.random.default_rng(14)
        corr, pose = make_exact(rng, n=80)
        ext = random_pose(rng, scale_range=(1.0, 1.0))
        cam = CameraModel(
            fx=500, fy=500, cx=320, cy=240, rotation=ext.rotation, translation=ext.translation
        )
        world = estimate_pose(corr, cam, OutlierParams(n_neighbors=10), seed=0)
        expected = ext.compose(pose)
        assert rotation_angle(world.rotation.T @ expected.rotation) < 1e-9
        assert np.abs(world.translation - expected.translation).max() < 1e-9

    def test_noise_and_outliers_monte_carlo(self):
        # 10% outliers + 5 mm gaussian noise: translation within 2 cm on
        # at least 95% of 200 trials
        rng = np.random.default_rng(15)
        ok = 0
        trials = 200
        for _ in range(trials):
            pose = random_pose(rng, scale_range=(0.8, 1.6))
            noc = rng.uniform(-0.5, 0.5, (120, 3))
            obs = pose.apply(noc) + rng.normal(0, 0.005, (120, 3))
            n_out = 12
            idx = rng.choice(120, n_out, replace=False)
            obs[idx] += rng.uniform(0.15, 0.8, (n_out, 3)) * rng.choice([-1, 1], (n_out, 3))
            try:
                fit = fit_camera_pose(
                    Correspondences(noc, obs), OutlierParams(n_neighbors=10), seed=0
                )
            except (PoseFailureError, DegenerateGeometryError):
                continue
            if np.linalg.norm(fit.translation - pose.translation) < 0.02:
                ok += 1
        assert ok >= 0.95 * trials

    def test_statistical_filter_keeps_pairing(self):
        rng = np.random.default_rng(16)
        corr, _ = make_exact(rng, n=60)
        bad_obs = corr.obs.copy()
        bad_obs[7] += 50.0  # far outlier in the observed cloud only
        cleaned, kept = filter_correspondences(
            Correspondences(corr.noc, bad_obs), OutlierParams(n_neighbors=10)
        )
        assert 7 not in kept
        assert len(cleaned) == len(kept)
        for local, original in enumerate(kept):
            assert np.array_equal(cleaned.noc[local], corr.noc[original])
