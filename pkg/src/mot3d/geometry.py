"""Core geometric types and operations.

Conventions used throughout the package:

* All arithmetic is 64-bit floating point.
* Point clouds are plain ``(N, 3)`` float64 arrays, one point per row.
* Occupancy grids are ``(R, R, R)`` boolean arrays (``R = 32`` by default).
* The world is z-up; "ground plane" means the xy-plane and oriented boxes
  carry a single yaw angle about +z.
* Euler angles use the intrinsic XYZ convention:
  ``R = Rx(a) @ Ry(b) @ Rz(c)``, each component wrapped to ``(-pi, pi]``.
* Cameras look along +z of their local frame; ``extrinsic`` maps camera
  coordinates to world coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GRID_RESOLUTION = 32

_ROT_TOL = 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def _check_rotation(r: np.ndarray, what: str = "rotation") -> None:
    if r.shape != (3, 3):
        raise ValueError(f"{what} must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError(f"{what} has non-finite entries")
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err >= _ROT_TOL:
        raise ValueError(f"{what} is not orthogonal (|R^T R - I|_inf = {err:.3e})")
    if np.linalg.det(r) < 0.0:
        raise ValueError(f"{what} has negative determinant (reflection)")


def wrap_angle(a):
    """Wrap angle(s) to the half-open interval (-pi, pi]."""
    t = np.remainder(np.asarray(a, dtype=np.float64), 2.0 * np.pi)
    w = np.where(t > np.pi, t - 2.0 * np.pi, t)
    return float(w) if np.isscalar(a) or np.ndim(a) == 0 else w


def euler_to_matrix(euler) -> np.ndarray:
    """Rotation matrix for intrinsic XYZ angles ``(a, b, c)``."""
    a, b, c = np.asarray(euler, dtype=np.float64)
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(b), math.sin(b)
    cc, sc = math.cos(c), math.sin(c)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rz = np.array([[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]])
    return rx @ ry @ rz


def matrix_to_euler(r: np.ndarray) -> np.ndarray:
    """Intrinsic XYZ angles of a rotation matrix, each in (-pi, pi].

    At gimbal lock (|b| = pi/2) the split between a and c is not unique;
    c is reported as 0.
    """
    r = np.asarray(r, dtype=np.float64)
    sb = float(np.clip(r[0, 2], -1.0, 1.0))
    if abs(sb) < 1.0 - 1e-12:
        b = math.asin(sb)
        a = math.atan2(-r[1, 2], r[2, 2])
        c = math.atan2(-r[0, 1], r[0, 0])
    else:
        b = math.copysign(math.pi / 2.0, sb)
        a = math.atan2(r[1, 0], r[1, 1])
        c = 0.0
    return np.array([wrap_angle(a), wrap_angle(b), wrap_angle(c)])


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_from_matrix(r: np.ndarray) -> float:
    """Heading of the rotated x-axis in the ground plane."""
    return math.atan2(r[1, 0], r[0, 0])


def rotation_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula: rotation matrix for an axis-angle 3-vector."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return np.eye(3)
    k = w / theta
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(theta) * kx + (1.0 - math.cos(theta)) * (kx @ kx)


def _quaternion_from_matrix(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) via the largest-pivot rule, stable for
    every rotation angle."""
    t = float(np.trace(r))
    if t > 0.0:
        s = 2.0 * math.sqrt(t + 1.0)
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = 2.0 * math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def rotation_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle 3-vector of a rotation matrix (angle in [0, pi])."""
    q = _quaternion_from_matrix(np.asarray(r, dtype=np.float64))
    v = q[1:]
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        return 2.0 * v
    return 2.0 * math.atan2(n, q[0]) * v / n


@dataclass(frozen=True)
class Pose7:
    """7-DoF similarity pose: ``x -> scale * rotation @ x + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", _freeze(self.rotation))
        object.__setattr__(self, "translation", _freeze(self.translation))
        if not (np.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError(f"scale must be finite and > 0, got {self.scale}")
        _check_rotation(self.rotation)
        if self.translation.shape != (3,) or not np.all(np.isfinite(self.translation)):
            raise ValueError("translation must be a finite 3-vector")

    @classmethod
    def identity(cls) -> "Pose7":
        return cls(1.0, np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix of the similarity transform."""
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose7") -> "Pose7":
        """Pose applying ``other`` first, then ``self``."""
        return Pose7(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose7":
        rt = self.rotation.T
        return Pose7(1.0 / self.scale, rt, -(rt @ self.translation) / self.scale)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return apply_pose(self, points)

    def center(self) -> np.ndarray:
        """World position of the object-space origin."""
        return self.translation


@dataclass(frozen=True)
class EulerPose:
    """Euler-angle view of a :class:`Pose7`, tagged with a frame index."""

    scale: float
    euler: np.ndarray
    translation: np.ndarray
    time_step: int

    def __post_init__(self):
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "euler", _freeze(self.euler))
        object.__setattr__(self, "translation", _freeze(self.translation))
        object.__setattr__(self, "time_step", int(self.time_step))
        if not (np.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError("scale must be finite and > 0")
        if self.euler.shape != (3,) or self.translation.shape != (3,):
            raise ValueError("euler and translation must be 3-vectors")
        if np.any(self.euler <= -np.pi) or np.any(self.euler > np.pi):
            raise ValueError("euler components must lie in (-pi, pi]")

    @classmethod
    def from_pose7(cls, pose: Pose7, time_step: int) -> "EulerPose":
        return cls(pose.scale, matrix_to_euler(pose.rotation), pose.translation, time_step)

    def to_pose7(self) -> Pose7:
        return Pose7(self.scale, euler_to_matrix(self.euler), self.translation)


@dataclass(frozen=True)
class Box2:
    """Axis-aligned 2D box in pixels."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", _freeze(self.min))
        object.__setattr__(self, "max", _freeze(self.max))
        if self.min.shape != (2,) or self.max.shape != (2,):
            raise ValueError("Box2 corners must be 2-vectors")
        if np.any(self.min > self.max):
            raise ValueError("Box2 requires min <= max componentwise")

    def area(self) -> float:
        w, h = self.max - self.min
        return float(w * h)


def iou2d(a: Box2, b: Box2) -> float:
    """Intersection-over-union of two pixel boxes."""
    lo = np.maximum(a.min, b.min)
    hi = np.minimum(a.max, b.max)
    inter = float(np.prod(np.maximum(hi - lo, 0.0)))
    union = a.area() + b.area() - inter
    return inter / union if union > 0.0 else 0.0


@dataclass(frozen=True)
class Box3:
    """Gravity-aligned oriented 3D box: yaw about +z, half extents in meters."""

    center: np.ndarray
    half_extents: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", _freeze(self.center))
        object.__setattr__(self, "half_extents", _freeze(self.half_extents))
        object.__setattr__(self, "yaw", float(self.yaw))
        if self.center.shape != (3,) or self.half_extents.shape != (3,):
            raise ValueError("Box3 center and half_extents must be 3-vectors")
        if np.any(self.half_extents < 0.0) or not np.all(np.isfinite(self.half_extents)):
            raise ValueError("Box3 half_extents must be finite and >= 0")

    def volume(self) -> float:
        return float(8.0 * np.prod(self.half_extents))

    def corners(self) -> np.ndarray:
        """(8, 3) world corners."""
        hx, hy, hz = self.half_extents
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        local = signs * np.array([hx, hy, hz])
        return local @ rot_z(self.yaw).T + self.center

    def footprint(self) -> np.ndarray:
        """(4, 2) ground-plane rectangle corners, counter-clockwise."""
        hx, hy = self.half_extents[:2]
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        r = np.array([[c, -s], [s, c]])
        return local @ r.T + self.center[:2]

    def z_interval(self) -> tuple[float, float]:
        return (
            float(self.center[2] - self.half_extents[2]),
            float(self.center[2] + self.half_extents[2]),
        )


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with a rigid camera-to-world extrinsic.

    ``width`` and ``height`` bound the pixel domain ``[0, width) x [0, height)``
    used for projection validity and frustum tests.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: float = 640.0
    height: float = 480.0

    def __post_init__(self):
        object.__setattr__(self, "fx", float(self.fx))
        object.__setattr__(self, "fy", float(self.fy))
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "height", float(self.height))
        object.__setattr__(self, "rotation", _freeze(self.rotation))
        object.__setattr__(self, "translation", _freeze(self.translation))
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        _check_rotation(self.rotation, "camera extrinsic rotation")
        if self.translation.shape != (3,):
            raise ValueError("camera translation must be a 3-vector")

    def world_from_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def camera_from_world(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation

    def with_extrinsic(self, rotation: np.ndarray, translation: np.ndarray) -> "CameraModel":
        return CameraModel(
            self.fx, self.fy, self.cx, self.cy, rotation, translation, self.width, self.height
        )


def backproject(pixels: np.ndarray, depths: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Lift pixels with depths to camera-frame 3D points.

    Parameters
    ----------
    pixels : (N, 2) array of (u, v) pixel coordinates.
    depths : (N,) array of depths in meters; all must be finite and > 0.
    cam : camera intrinsics.

    Returns
    -------
    (N, 3) array; row i is ``((u-cx)*d/fx, (v-cy)*d/fy, d)``. Row order
    follows the input order, so a row-major patch stays row-major.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    if pixels.shape[0] != depths.shape[0]:
        raise ValueError(f"{pixels.shape[0]} pixels vs {depths.shape[0]} depths")
    if depths.size == 0:
        return np.zeros((0, 3))
    if not np.all(np.isfinite(depths)) or not np.all(depths > 0.0):
        raise ValueError("depths must be finite and > 0")
    if not np.all(np.isfinite(pixels)):
        raise ValueError("pixels must be finite")
    x = (pixels[:, 0] - cam.cx) * depths / cam.fx
    y = (pixels[:, 1] - cam.cy) * depths / cam.fy
    return np.column_stack([x, y, depths])


def backproject_patch(depth_patch: np.ndarray, cam: CameraModel, origin=(0.0, 0.0)) -> np.ndarray:
    """Backproject a dense (H, W) depth patch whose top-left pixel is ``origin``."""
    depth_patch = np.asarray(depth_patch, dtype=np.float64)
    if depth_patch.size == 0:
        return np.zeros((0, 3))
    h, w = depth_patch.shape
    u0, v0 = origin
    vv, uu = np.mgrid[0:h, 0:w]
    pixels = np.column_stack([(uu + u0).ravel(), (vv + v0).ravel()])
    return backproject(pixels, depth_patch.ravel(), cam)


def project(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Project camera-frame points to pixels. Points must have z > 0."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.size == 0:
        return np.zeros((0, 2))
    z = points[:, 2]
    if np.any(z <= 0.0):
        raise ValueError("cannot project points with non-positive depth")
    u = cam.fx * points[:, 0] / z + cam.cx
    v = cam.fy * points[:, 1] / z + cam.cy
    return np.column_stack([u, v])


def apply_pose(p: Pose7, points: np.ndarray) -> np.ndarray:
    """Map each point x to ``scale * R @ x + t``."""
    points = np.asarray(points, dtype=np.float64)
    return p.scale * points @ p.rotation.T + p.translation


def _clip_polygon(poly: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Sutherland-Hodgman clip against the half-plane left of segment a->b
    # (interior side for a counter-clockwise rectangle).
    edge = b - a
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        sp = edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])
        sq = edge[0] * (q[1] - a[1]) - edge[1] * (q[0] - a[0])
        inside_p = sp >= -1e-15
        inside_q = sq >= -1e-15
        if inside_p:
            out.append(p)
        if inside_p != inside_q:
            t = sp / (sp - sq)
            out.append(p + t * (q - p))
    return np.asarray(out) if out else np.zeros((0, 2))


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def iou3d_boxes(a: Box3, b: Box3) -> float:
    """3D IoU of two yaw boxes: ground-plane polygon clipping times height overlap."""
    va, vb = a.volume(), b.volume()
    if va == 0.0 or vb == 0.0:
        return 0.0
    za, zb = a.z_interval(), b.z_interval()
    dz = min(za[1], zb[1]) - max(za[0], zb[0])
    if dz <= 0.0:
        return 0.0
    poly = a.footprint()
    rect_b = b.footprint()
    for i in range(4):
        poly = _clip_polygon(poly, rect_b[i], rect_b[(i + 1) % 4])
        if len(poly) == 0:
            return 0.0
    inter = _polygon_area(poly) * dz
    union = va + vb - inter
    return float(inter / union) if union > 0.0 else 0.0


def boxes_intersect(a: Box3, b: Box3, margin: float = 0.0) -> bool:
    """Separating-axis overlap test for two yaw boxes, optionally inflated."""
    za, zb = a.z_interval(), b.z_interval()
    if za[0] - margin >= zb[1] or zb[0] - margin >= za[1]:
        return False
    fa, fb = a.footprint(), b.footprint()
    for rect in (fa, fb):
        for i in range(2):
            edge = rect[(i + 1) % 4] - rect[i]
            axis = np.array([-edge[1], edge[0]])
            axis /= np.linalg.norm(axis)
            pa = fa @ axis
            pb = fb @ axis
            if pa.max() + margin <= pb.min() or pb.max() + margin <= pa.min():
                return False
    return True


def iou3d_grids(a: np.ndarray, b: np.ndarray) -> float:
    """Voxel IoU ``|a & b| / |a | b|``. Two empty grids count as identical (1.0)."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"grid resolution mismatch: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return float(np.count_nonzero(a & b) / union)
