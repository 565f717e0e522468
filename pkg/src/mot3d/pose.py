"""7-DoF pose recovery from normalized-object-coordinate correspondences.

The fitting pipeline per detection is: statistical outlier removal on both
point clouds, RANSAC pruning of inconsistent correspondences, a closed-form
similarity fit (Umeyama), then lifting the camera-frame pose to world
coordinates through the camera extrinsic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError, PoseFailureError
from .geometry import CameraModel, Pose7


@dataclass(frozen=True)
class OutlierParams:
    """Knobs for both outlier-removal stages and the minimum problem size."""

    n_neighbors: int = 20
    std_ratio: float = 2.0
    ransac_iterations: int = 100
    ransac_inlier_threshold: float = 0.01
    min_correspondences: int = 3

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")
        if self.std_ratio <= 0.0:
            raise ValueError("std_ratio must be > 0")
        if self.ransac_iterations < 1:
            raise ValueError("ransac_iterations must be >= 1")
        if self.min_correspondences < 3:
            raise ValueError("min_correspondences must be >= 3")


@dataclass(frozen=True)
class Correspondences:
    """Index-aligned pairing of normalized-object points with observed points.

    ``noc`` lives in normalized object space (each coordinate nominally in
    [-0.5, 0.5]); ``obs`` is in the camera frame, meters.
    """

    noc: np.ndarray
    obs: np.ndarray

    def __post_init__(self):
        noc = np.asarray(self.noc, dtype=np.float64).reshape(-1, 3)
        obs = np.asarray(self.obs, dtype=np.float64).reshape(-1, 3)
        if noc.shape[0] != obs.shape[0]:
            raise ValueError(f"{noc.shape[0]} noc points vs {obs.shape[0]} observed")
        object.__setattr__(self, "noc", noc)
        object.__setattr__(self, "obs", obs)

    def __len__(self) -> int:
        return self.noc.shape[0]

    def take(self, indices: np.ndarray) -> "Correspondences":
        return Correspondences(self.noc[indices], self.obs[indices])


def statistical_outlier_filter(
    cloud: np.ndarray, params: OutlierParams = OutlierParams()
) -> tuple[np.ndarray, np.ndarray]:
    """Remove points whose mean k-nearest-neighbor distance is anomalous.

    A point is dropped when its mean distance to the ``n_neighbors`` nearest
    other points exceeds ``global mean + std_ratio * global std``. Returns the
    filtered cloud and the (strictly increasing) kept indices. Clouds with at
    most ``n_neighbors`` points are returned unchanged with a warning.
    """
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    n = cloud.shape[0]
    if n <= params.n_neighbors:
        warnings.warn(
            f"statistical_outlier_filter: {n} points <= n_neighbors="
            f"{params.n_neighbors}; cloud returned unchanged",
            stacklevel=2,
        )
        return cloud, np.arange(n)
    tree = cKDTree(cloud)
    dists, _ = tree.query(cloud, k=params.n_neighbors + 1)
    mean_dist = dists[:, 1:].mean(axis=1)
    threshold = mean_dist.mean() + params.std_ratio * mean_dist.std()
    kept = np.flatnonzero(mean_dist <= threshold)
    return cloud[kept], kept


def _umeyama_arrays(src: np.ndarray, dst: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares similarity (c, R, t) with dst ~ c R src + t."""
    n = src.shape[0]
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    d_src = src - mu_src
    d_dst = dst - mu_dst
    cov = d_dst.T @ d_src / n
    var_src = (d_src**2).sum() / n
    u, s, vt = np.linalg.svd(cov)
    if var_src <= 0.0 or s[1] <= max(s[0], 1.0) * 1e-12:
        raise DegenerateGeometryError(
            "correspondences are coincident or collinear; similarity fit is rank-deficient"
        )
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        sign[2] = -1.0
    r = (u * sign) @ vt
    c = float((s * sign).sum() / var_src)
    if not np.isfinite(c) or c <= 0.0:
        raise DegenerateGeometryError(f"similarity fit produced non-positive scale {c}")
    t = mu_dst - c * r @ mu_src
    return c, r, t


def umeyama_fit(corr: Correspondences) -> Pose7:
    """Closed-form similarity aligning ``noc`` onto ``obs``.

    Minimizes ``sum_i |obs_i - (c R noc_i + t)|^2`` over c > 0, R in SO(3),
    t in R^3, with the determinant-sign correction so R is always a proper
    rotation even when the optimal linear map would be a reflection.
    """
    if len(corr) < 3:
        raise PoseFailureError(f"need at least 3 correspondences, got {len(corr)}")
    c, r, t = _umeyama_arrays(corr.noc, corr.obs)
    return Pose7(c, r, t)


def umeyama_residual(corr: Correspondences, pose: Pose7) -> float:
    """Sum of squared alignment errors under ``pose``."""
    res = corr.obs - pose.apply(corr.noc)
    return float((res**2).sum())


def umeyama_residual_grad(
    corr: Correspondences,
) -> tuple[float, np.ndarray, np.ndarray, Pose7]:
    """Optimal residual and its gradients w.r.t. both point clouds.

    Because the fitted (c, R, t) is a stationary point of the objective, the
    gradient of the optimal residual reduces to the partial derivatives at
    fixed pose: ``d/d obs_i = 2 r_i`` and ``d/d noc_i = -2 c R^T r_i`` where
    ``r_i`` is the signed residual of pair i.
    """
    pose = umeyama_fit(corr)
    res = corr.obs - pose.apply(corr.noc)
    d_obs = 2.0 * res
    d_noc = -2.0 * pose.scale * res @ pose.rotation
    return float((res**2).sum()), d_obs, d_noc, pose


def ransac_alignment_filter(
    corr: Correspondences, params: OutlierParams, seed: int
) -> Correspondences:
    """Keep the largest consensus set of correspondences under a similarity fit.

    Samples 3 pairs per iteration, fits a similarity, and counts pairs whose
    alignment error is within ``ransac_inlier_threshold``. Deterministic for a
    fixed seed. Raises :class:`PoseFailureError` when the input or the best
    consensus set is smaller than ``min_correspondences``.
    """
    n = len(corr)
    if n < params.min_correspondences:
        raise PoseFailureError(
            f"{n} correspondences < min_correspondences={params.min_correspondences}"
        )
    rng = np.random.default_rng(seed)
    iters = params.ransac_iterations
    # 3 smallest of n iid uniforms form a uniform random 3-subset; one rng
    # draw keeps the whole run trivially reproducible.
    samples = np.argpartition(rng.random((iters, n)), 2, axis=1)[:, :3]

    src = corr.noc[samples]  # (iters, 3, 3)
    dst = corr.obs[samples]
    mu_src = src.mean(axis=1, keepdims=True)
    mu_dst = dst.mean(axis=1, keepdims=True)
    d_src = src - mu_src
    d_dst = dst - mu_dst
    cov = np.einsum("bij,bik->bjk", d_dst, d_src) / 3.0
    var_src = (d_src**2).sum(axis=(1, 2)) / 3.0
    u, s, vt = np.linalg.svd(cov)
    sign = np.ones((iters, 3))
    flip = np.linalg.det(u) * np.linalg.det(vt) < 0.0
    sign[flip, 2] = -1.0
    r = np.einsum("bij,bjk->bik", u * sign[:, None, :], vt)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (s * sign).sum(axis=1) / var_src
    valid = np.isfinite(c) & (c > 0.0) & (s[:, 1] > np.maximum(s[:, 0], 1.0) * 1e-9)
    t = mu_dst[:, 0, :] - c[:, None] * np.einsum("bij,bj->bi", r, mu_src[:, 0, :])

    mapped = c[:, None, None] * np.einsum("nj,bij->bni", corr.noc, r) + t[:, None, :]
    err2 = ((corr.obs[None, :, :] - mapped) ** 2).sum(axis=2)
    inlier = err2 <= params.ransac_inlier_threshold**2
    counts = np.where(valid, inlier.sum(axis=1), -1)
    best = int(np.argmax(counts))
    if counts[best] < params.min_correspondences:
        raise PoseFailureError(
            f"best RANSAC consensus has {max(int(counts[best]), 0)} correspondences, "
            f"need {params.min_correspondences}"
        )
    return corr.take(np.flatnonzero(inlier[best]))


def filter_correspondences(
    corr: Correspondences, params: OutlierParams
) -> tuple[Correspondences, np.ndarray]:
    """Statistical filtering of both clouds; a pair survives only if both
    of its endpoints do. Returns the filtered pairing and kept indices."""
    _, kept_noc = statistical_outlier_filter(corr.noc, params)
    _, kept_obs = statistical_outlier_filter(corr.obs, params)
    kept = np.intersect1d(kept_noc, kept_obs)
    return corr.take(kept), kept


def fit_camera_pose(corr: Correspondences, params: OutlierParams, seed: int) -> Pose7:
    """Full cleaning + fitting pipeline in the camera frame."""
    cleaned, _ = filter_correspondences(corr, params)
    if len(cleaned) < params.min_correspondences:
        raise PoseFailureError(
            f"{len(cleaned)} correspondences survive statistical filtering, "
            f"need {params.min_correspondences}"
        )
    inliers = ransac_alignment_filter(cleaned, params, seed)
    return umeyama_fit(inliers)


def estimate_pose(det, cam: CameraModel, params: OutlierParams, seed: int) -> Pose7:
    """World-frame 7-DoF pose of a detection record.

    Runs :func:`fit_camera_pose` on the detection's correspondences and
    left-composes the camera extrinsic. Raises :class:`PoseFailureError` or
    :class:`DegenerateGeometryError`; callers should mark such detections
    pose-less (no graph edges; a miss if nothing else matches).
    """
    corr = det.correspondences if hasattr(det, "correspondences") else det
    pose_cam = fit_camera_pose(corr, params, seed)
    world = Pose7(1.0, cam.rotation, cam.translation)
    return world.compose(pose_cam)
