"""Deterministic indoor multi-object trajectory simulator.

Generates ground-truth sequences (object poses, camera trajectory, per-frame
boxes and visibility) by rejection sampling with a repulsive weighting that
steers objects away from nearby obstacles, then synthesizes detection records
by corrupting the ground truth with a configurable noise model. Everything is
driven by a single seeded generator, so equal seeds give bit-identical
output.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .association import DetectionRecord
from .errors import TrackingError
from .geometry import (
    Box2,
    Box3,
    CameraModel,
    Pose7,
    boxes_intersect,
    euler_to_matrix,
    project,
    rot_z,
    rotation_exp,
    rotation_log,
    yaw_from_matrix,
    GRID_RESOLUTION,
)
from .pose import Correspondences

logger = logging.getLogger(__name__)

DEFAULT_INTRINSICS = dict(fx=400.0, fy=400.0, cx=320.0, cy=240.0, width=640.0, height=480.0)

CLASS_HALF_EXTENTS = {
    "chair": (0.25, 0.25, 0.45),
    "table": (0.55, 0.38, 0.36),
    "sofa": (0.85, 0.42, 0.40),
    "bed": (0.95, 0.70, 0.28),
    "tv_stand": (0.50, 0.20, 0.25),
    "nightstand": (0.20, 0.20, 0.26),
    "cooler": (0.24, 0.24, 0.50),
}

CLASS_VARIANTS = {
    "chair": 5,
    "table": 2,
    "sofa": 2,
    "bed": 2,
    "tv_stand": 2,
    "nightstand": 2,
    "cooler": 2,
}


def _fill_box(grid: np.ndarray, lo, hi) -> None:
    """Mark all cells whose centers fall inside the normalized box [lo, hi]."""
    r = grid.shape[0]
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    a = np.clip(np.ceil((lo + 0.5) * r - 0.5), 0, r).astype(int)
    b = np.clip(np.floor((hi + 0.5) * r - 0.5), -1, r - 1).astype(int) + 1
    if np.all(a < b):
        grid[a[0] : b[0], a[1] : b[1], a[2] : b[2]] = True


def make_canonical_grid(class_name: str, h: np.ndarray, variant: int = 0) -> np.ndarray:
    """Procedural occupancy grid for a furniture class.

    ``h`` is the normalized half-extent vector (components <= 0.5); the shape
    fills the box [-h, h] in normalized object space. Variants give distinct
    same-class geometries at identical extents.
    """
    g = np.zeros((GRID_RESOLUTION,) * 3, dtype=bool)
    hx, hy, hz = h
    leg = 0.22 + 0.06 * (variant % 2)
    if class_name == "chair":
        _fill_box(g, (-hx, -hy, -0.1 * hz), (hx, hy, 0.25 * hz))  # seat
        for sx in (-1, 1):
            for sy in (-1, 1):
                _fill_box(
                    g,
                    (sx * hx - (sx > 0) * leg * hx * 2, sy * hy - (sy > 0) * leg * hy * 2, -hz),
                    (sx * hx + (sx < 0) * leg * hx * 2, sy * hy + (sy < 0) * leg * hy * 2, -0.1 * hz),
                )
        if variant == 0:
            _fill_box(g, (hx - 0.3 * hx, -hy, 0.25 * hz), (hx, hy, hz))  # solid back
        elif variant == 1:
            _fill_box(g, (hx - 0.3 * hx, -hy, 0.7 * hz), (hx, hy, hz))  # top rail
            for sy in (-1, 1):
                _fill_box(g, (hx - 0.3 * hx, sy * hy - (sy > 0) * 0.5 * hy, 0.25 * hz),
                          (hx, sy * hy + (sy < 0) * 0.5 * hy, hz))
        elif variant == 2:
            _fill_box(g, (-hx, hy - 0.3 * hy, 0.25 * hz), (hx, hy, hz))  # side back
        elif variant == 3:
            _fill_box(g, (hx - 0.3 * hx, -hy, 0.25 * hz), (hx, hy, 0.9 * hz))  # armchair
            for sy in (-1, 1):
                _fill_box(g, (-hx, sy * hy - (sy > 0) * 0.35 * hy, 0.25 * hz),
                          (hx, sy * hy + (sy < 0) * 0.35 * hy, 0.6 * hz))
        else:
            _fill_box(g, (-0.6 * hx, -0.6 * hy, -hz), (0.6 * hx, 0.6 * hy, 0.3 * hz))  # stool
    elif class_name == "table":
        _fill_box(g, (-hx, -hy, hz - 0.3 * hz), (hx, hy, hz))  # top
        inset = 0.0 if variant == 0 else 0.15
        for sx in (-1, 1):
            for sy in (-1, 1):
                cx = sx * (hx * (1.0 - inset) - leg * hx)
                cy = sy * (hy * (1.0 - inset) - leg * hy)
                _fill_box(g, (cx - leg * hx, cy - leg * hy, -hz), (cx + leg * hx, cy + leg * hy, hz - 0.3 * hz))
    elif class_name == "sofa":
        _fill_box(g, (-hx, -hy, -hz), (hx, hy, 0.1 * hz))  # base
        _fill_box(g, (-hx, hy - 0.35 * hy, -hz), (hx, hy, hz))  # back
        arm_h = 0.5 * hz if variant == 0 else 0.9 * hz
        for sx in (-1, 1):
            _fill_box(g, (sx * hx - (sx > 0) * 0.3 * hx, -hy, -hz), (sx * hx + (sx < 0) * 0.3 * hx, hy, arm_h))
    elif class_name == "bed":
        _fill_box(g, (-hx, -hy, -hz), (hx, hy, 0.2 * hz))  # mattress
        if variant == 0:
            _fill_box(g, (hx - 0.15 * hx, -hy, -hz), (hx, hy, hz))  # headboard
        else:
            _fill_box(g, (hx - 0.15 * hx, -0.6 * hy, -hz), (hx, 0.6 * hy, hz))
    elif class_name == "tv_stand":
        _fill_box(g, (-hx, -hy, -hz), (hx, hy, 0.0))
        for sx in (-1, 1):
            _fill_box(g, (sx * hx - (sx > 0) * 0.25 * hx, -hy, 0.0), (sx * hx + (sx < 0) * 0.25 * hx, hy, hz))
        if variant == 1:
            _fill_box(g, (-hx, -hy, 0.8 * hz), (hx, hy, hz))
    elif class_name == "nightstand":
        _fill_box(g, (-hx, -hy, -hz), (hx, hy, hz))
        if variant == 1:
            _fill_box_empty = (-0.6 * hx, -0.6 * hy, 0.1 * hz)
            g_slice = np.zeros_like(g)
            _fill_box(g_slice, _fill_box_empty, (0.6 * hx, 0.6 * hy, 0.7 * hz))
            g &= ~g_slice
    elif class_name == "cooler":
        _fill_box(g, (-hx, -hy, -hz), (hx, hy, hz))
        notch = np.zeros_like(g)
        depth = 0.4 if variant == 0 else 0.7
        _fill_box(notch, (hx - depth * hx, -0.5 * hy, -0.5 * hz), (hx, 0.5 * hy, 0.5 * hz))
        g &= ~notch
    else:
        raise ValueError(f"unknown object class {class_name!r}")
    return g


def surface_points(grid: np.ndarray) -> np.ndarray:
    """Normalized-space centers of occupied cells exposed to free space."""
    g = np.asarray(grid, dtype=bool)
    r = g.shape[0]
    padded = np.pad(g, 1, constant_values=False)
    interior = np.ones_like(g)
    for axis in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    surf = g & ~interior
    idx = np.argwhere(surf)
    return (idx + 0.5) / r - 0.5


@dataclass(frozen=True)
class ObjectSpec:
    """A simulated object: class, world extents, scale, canonical occupancy."""

    instance_id: int
    class_name: str
    half_extents: np.ndarray  # world meters
    scale: float
    canonical_grid: np.ndarray
    canonical_half_extents: np.ndarray
    variant: int = 0
    surface: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        he = np.asarray(self.half_extents, dtype=np.float64)
        che = np.asarray(self.canonical_half_extents, dtype=np.float64)
        if np.any(he <= 0.0) or np.any(che <= 0.0) or np.any(che > 0.5 + 1e-12):
            raise ValueError("object extents must be positive (normalized <= 0.5)")
        object.__setattr__(self, "half_extents", he)
        object.__setattr__(self, "canonical_half_extents", che)
        object.__setattr__(self, "canonical_grid", np.asarray(self.canonical_grid, dtype=bool))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "surface", surface_points(self.canonical_grid))

    @classmethod
    def create(cls, instance_id: int, class_name: str, half_extents=None, variant: int = 0):
        he = np.asarray(
            half_extents if half_extents is not None else CLASS_HALF_EXTENTS[class_name],
            dtype=np.float64,
        )
        scale = 2.0 * float(he.max())
        che = he / scale
        grid = make_canonical_grid(class_name, che, variant)
        return cls(instance_id, class_name, he, scale, grid, che, variant)


@dataclass(frozen=True)
class NoiseModel:
    """Corruption applied when turning ground truth into detections.

    ``dropout_prob`` is the chance that a currently-detected object starts a
    missed run; ``dropout_persistence`` is the chance the run continues into
    the next frame, which models occlusions lasting several frames rather
    than independent per-frame misses.
    """

    correspondence_noise_std: float = 0.005  # meters, observed cloud
    outlier_fraction: float = 0.10
    dropout_prob: float = 0.25
    objectness_range: tuple = (0.5, 1.0)
    grid_corruption_rate: float = 0.005
    dropout_persistence: float = 0.0

    def __post_init__(self):
        if self.correspondence_noise_std < 0.0:
            raise ValueError("correspondence_noise_std must be >= 0")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must be in [0, 1)")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must be in [0, 1]")
        if not 0.0 <= self.grid_corruption_rate < 1.0:
            raise ValueError("grid_corruption_rate must be in [0, 1)")
        if not 0.0 <= self.dropout_persistence < 1.0:
            raise ValueError("dropout_persistence must be in [0, 1)")
        lo, hi = self.objectness_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("objectness_range must satisfy 0 <= lo <= hi <= 1")
        object.__setattr__(self, "objectness_range", (float(lo), float(hi)))

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0, (1.0, 1.0), 0.0, 0.0)


@dataclass(frozen=True)
class SceneConfig:
    """Room, object set and sampling parameters for one sequence."""

    objects: tuple
    room_min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    room_max: np.ndarray = field(default_factory=lambda: np.array([5.0, 4.0, 2.6]))
    obstacles: tuple = ()
    frames: int = 25
    sigma: float = 0.15  # object step bound, meters
    phi_obj: float = 0.10  # object angle bound, radians
    phi_cam: float = 0.10
    eps0: float = 0.10  # camera step base
    d_star: float = 0.60  # repulsion threshold, meters
    sigma0: float = 1.0  # repulsion gain
    n_max: int = 500
    interest_threshold: float = 1.0
    min_surface_points: int = 30
    camera: CameraModel = field(default_factory=lambda: CameraModel(**DEFAULT_INTRINSICS))
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        rmin = np.asarray(self.room_min, dtype=np.float64)
        rmax = np.asarray(self.room_max, dtype=np.float64)
        object.__setattr__(self, "room_min", rmin)
        object.__setattr__(self, "room_max", rmax)
        if len(self.objects) < 3:
            raise ValueError(f"need at least 3 objects, got {len(self.objects)}")
        if self.frames < 2:
            raise ValueError("frames must be >= 2")
        if np.any(rmax <= rmin):
            raise ValueError("room_max must exceed room_min componentwise")
        for name in ("sigma", "phi_obj", "phi_cam", "eps0"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.d_star <= 0.0 or self.sigma0 <= 0.0:
            raise ValueError("d_star and sigma0 must be > 0")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")


@dataclass(frozen=True)
class FrameAnnotation:
    """Per-frame ground truth: camera, object poses/boxes, visibility."""

    camera: CameraModel
    poses: tuple  # Pose7 per object, aligned with config.objects
    boxes: tuple  # Box3 per object
    visible: tuple  # instance ids visible in this frame


@dataclass(frozen=True)
class SceneSequence:
    config: SceneConfig
    frames: tuple

    def gt_boxes_by_frame(self) -> dict[int, list]:
        """Per-frame (instance_id, Box3) lists for the visible objects."""
        out = {}
        for t, ann in enumerate(self.frames):
            vis = set(ann.visible)
            out[t] = [
                (spec.instance_id, ann.boxes[k])
                for k, spec in enumerate(self.config.objects)
                if spec.instance_id in vis
            ]
        return out

    def gt_centers_by_frame(self) -> list[list]:
        """Per-frame (instance_id, class, center) triples for visible objects."""
        out = []
        for ann in self.frames:
            vis = set(ann.visible)
            out.append(
                [
                    (spec.instance_id, spec.class_name, ann.boxes[k].center)
                    for k, spec in enumerate(self.config.objects)
                    if spec.instance_id in vis
                ]
            )
        return out


def repulsion_weight(d: float, d_star: float, sigma0: float = 1.0, n: int = 0, n_max: int = 500) -> float:
    """Distance-dependent steering factor: ``0.5 * sigma0 * (1/d - 1/d*)^2``
    when the obstacle is closer than ``d_star`` and fewer than ``n_max``
    attempts have been made, else 1."""
    if d <= 0.0:
        raise ValueError(f"distance must be > 0, got {d}")
    if d < d_star and n < n_max:
        return 0.5 * sigma0 * (1.0 / d - 1.0 / d_star) ** 2
    return 1.0


def nearest_obstacle(center: np.ndarray, others, obstacles, room_min, room_max):
    """Distance to, and unit direction away from, the nearest obstacle.

    Obstacles are other objects' box centers, static obstacle box centers,
    and the six room walls.
    """
    best_d = math.inf
    away = np.array([1.0, 0.0, 0.0])
    for box in list(others) + list(obstacles):
        delta = center - box.center
        d = float(np.linalg.norm(delta))
        if d < best_d:
            best_d = d
            away = delta / d if d > 0.0 else np.array([1.0, 0.0, 0.0])
    for axis in range(3):
        d_lo = float(center[axis] - room_min[axis])
        if d_lo < best_d:
            best_d = d_lo
            away = np.eye(3)[axis]
        d_hi = float(room_max[axis] - center[axis])
        if d_hi < best_d:
            best_d = d_hi
            away = -np.eye(3)[axis]
    return best_d, away


def box_inside_room(box: Box3, room_min, room_max) -> bool:
    c = box.corners()
    return bool(np.all(c >= room_min - 1e-12) and np.all(c <= room_max + 1e-12))


def collision_free(box: Box3, others, obstacles, room_min, room_max) -> bool:
    if not box_inside_room(box, room_min, room_max):
        return False
    return not any(boxes_intersect(box, o) for o in list(others) + list(obstacles))


def sample_object_step(
    rotation: np.ndarray,
    translation: np.ndarray,
    spec: ObjectSpec,
    others,
    config: SceneConfig,
    rng: np.random.Generator,
):
    """One rejection-sampled object step.

    Draws a uniform position delta in ``[-sigma, sigma]^3`` and a uniform
    Euler delta in ``[-phi_obj, phi_obj]^3``. If an obstacle sits closer
    than ``d_star``, the step component along the away direction is replaced
    by the repulsion-weighted magnitude of that component (always pointing
    away), then clipped back into the sampling box so the per-frame step
    bound holds. The orientation delta right-composes onto the rotation.
    Returns ``(rotation, translation, accepted)``; after ``n_max`` rejected
    candidates the previous pose is kept.
    """
    for n in range(config.n_max):
        u = rng.uniform(-config.sigma, config.sigma, 3)
        theta = rng.uniform(-config.phi_obj, config.phi_obj, 3)
        d, away = nearest_obstacle(
            translation, others, config.obstacles, config.room_min, config.room_max
        )
        if math.isfinite(d) and d > 0.0 and d < config.d_star:
            w = repulsion_weight(d, config.d_star, config.sigma0, n, config.n_max)
            along = float(u @ away)
            u = u - along * away + w * abs(along) * away
            u = np.clip(u, -config.sigma, config.sigma)
        cand_r = rotation @ euler_to_matrix(theta)
        cand_t = translation + u
        box = Box3(cand_t, spec.half_extents, yaw_from_matrix(cand_r))
        if collision_free(box, others, config.obstacles, config.room_min, config.room_max):
            return cand_r, cand_t, True
    logger.warning("object %d held its pose after %d attempts", spec.instance_id, config.n_max)
    return rotation, translation, False


def interest_score(cam: CameraModel, boxes, weights=None, moved=None) -> float:
    """Weighted sum of object visibility in the camera's view.

    Visibility of a box is the fraction of its 8 corners inside the viewing
    frustum; objects flagged as moved weigh double.
    """
    total = 0.0
    for k, box in enumerate(boxes):
        corners_cam = cam.camera_from_world(box.corners())
        z = corners_cam[:, 2]
        front = z > 1e-9
        frac = 0.0
        if np.any(front):
            pts = corners_cam[front]
            u = cam.fx * pts[:, 0] / pts[:, 2] + cam.cx
            v = cam.fy * pts[:, 1] / pts[:, 2] + cam.cy
            inside = (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
            frac = float(inside.sum()) / 8.0
        w = 1.0 if weights is None else float(weights[k])
        if moved is not None and moved[k]:
            w *= 2.0
        total += w * frac
    return total


def sample_camera_step(
    cam: CameraModel,
    frame_index: int,
    boxes,
    moved,
    config: SceneConfig,
    rng: np.random.Generator,
):
    """One camera step with a log-growing position bound.

    The bound is ``eps0 * (1 + ln(frame_index + 1))``; deltas right-compose
    in the camera's local frame. A candidate is accepted when its interest
    score reaches the threshold; after ``n_max`` rejections the previous
    pose is kept.
    """
    eps_i = config.eps0 * (1.0 + math.log(frame_index + 1))
    for _ in range(config.n_max):
        x = rng.uniform(-eps_i, eps_i, 3)
        theta = rng.uniform(-config.phi_cam, config.phi_cam, 3)
        cand = cam.with_extrinsic(
            cam.rotation @ euler_to_matrix(theta), cam.translation + cam.rotation @ x
        )
        if interest_score(cand, boxes, moved=moved) >= config.interest_threshold:
            return cand, True
    logger.warning("camera held its pose at frame %d after %d attempts", frame_index, config.n_max)
    return cam, False


def _look_at(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-9:
        raise ValueError("camera eye coincides with target")
    forward = forward / norm
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / rn
    down = np.cross(forward, right)
    r = np.column_stack([right, down, forward])
    # re-orthonormalize against accumulated rounding
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def _init_camera(config: SceneConfig, boxes, rng: np.random.Generator) -> CameraModel:
    centroid = np.mean([b.center for b in boxes], axis=0)
    span = config.room_max - config.room_min
    for _ in range(config.n_max):
        eye = np.array(
            [
                rng.uniform(config.room_min[0] + 0.1 * span[0], config.room_max[0] - 0.1 * span[0]),
                rng.uniform(config.room_min[1] + 0.1 * span[1], config.room_max[1] - 0.1 * span[1]),
                rng.uniform(config.room_min[2] + 0.55 * span[2], config.room_max[2] - 0.05 * span[2]),
            ]
        )
        cam = config.camera.with_extrinsic(_look_at(eye, centroid), eye)
        if interest_score(cam, boxes) >= config.interest_threshold:
            return cam
    raise TrackingError("could not find an initial camera pose meeting the interest threshold")


def _place_objects(config: SceneConfig, rng: np.random.Generator):
    rotations, translations, boxes = [], [], []
    for spec in config.objects:
        margin_xy = float(np.hypot(spec.half_extents[0], spec.half_extents[1]))
        placed = False
        for _ in range(config.n_max):
            yaw = rng.uniform(-math.pi, math.pi)
            t = np.array(
                [
                    rng.uniform(config.room_min[0] + margin_xy, config.room_max[0] - margin_xy),
                    rng.uniform(config.room_min[1] + margin_xy, config.room_max[1] - margin_xy),
                    config.room_min[2] + spec.half_extents[2] + 0.01,
                ]
            )
            box = Box3(t, spec.half_extents, yaw)
            if collision_free(box, boxes, config.obstacles, config.room_min, config.room_max):
                rotations.append(rot_z(yaw))
                translations.append(t)
                boxes.append(box)
                placed = True
                break
        if not placed:
            raise TrackingError(
                f"could not place object {spec.instance_id} without collisions; "
                "the room is too crowded"
            )
    return rotations, translations, boxes


def box_from_pose_and_grid(pose: Pose7, grid: np.ndarray) -> Box3:
    """Gravity-aligned world box of an object's occupied voxels under a pose."""
    occ = np.argwhere(grid)
    yaw = yaw_from_matrix(pose.rotation)
    if occ.size == 0:
        return Box3(pose.translation, np.full(3, 1e-3), yaw)
    r = grid.shape[0]
    lo = occ.min(axis=0)
    hi = occ.max(axis=0)
    center_n = (lo + hi + 1.0) / (2.0 * r) - 0.5
    half_n = (hi - lo + 1.0) / (2.0 * r)
    return Box3(pose.apply(center_n[None, :])[0], pose.scale * half_n, yaw)


def visible_surface_mask(world_points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Which world points project inside the image with positive depth."""
    pts = cam.camera_from_world(world_points)
    z = pts[:, 2]
    mask = z > 1e-9
    if not np.any(mask):
        return mask
    u = np.full(len(pts), -1.0)
    v = np.full(len(pts), -1.0)
    u[mask] = cam.fx * pts[mask, 0] / z[mask] + cam.cx
    v[mask] = cam.fy * pts[mask, 1] / z[mask] + cam.cy
    return mask & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)


def smooth_trajectory(poses, samples_per_segment: int = 1):
    """Interpolating spline through pose waypoints.

    Positions follow piecewise cubic Bezier segments whose control tangents
    come from the Catmull-Rom rule, so the curve passes through every
    waypoint; orientations are spherically interpolated and scales linearly
    interpolated per segment. With ``samples_per_segment == 1`` the output
    is exactly the waypoint list.
    """
    poses = list(poses)
    if samples_per_segment < 1:
        raise ValueError("samples_per_segment must be >= 1")
    if len(poses) == 0:
        raise ValueError("need at least one waypoint")
    if len(poses) == 1:
        return poses
    pos = np.array([p.translation for p in poses])
    w = len(poses)
    tangents = np.empty_like(pos)
    tangents[0] = pos[1] - pos[0]
    tangents[-1] = pos[-1] - pos[-2]
    if w > 2:
        tangents[1:-1] = (pos[2:] - pos[:-2]) / 2.0
    out = []
    for seg in range(w - 1):
        p0, p1 = pos[seg], pos[seg + 1]
        c1 = p0 + tangents[seg] / 3.0
        c2 = p1 - tangents[seg + 1] / 3.0
        r0 = poses[seg].rotation
        delta = rotation_log(r0.T @ poses[seg + 1].rotation)
        s0, s1 = poses[seg].scale, poses[seg + 1].scale
        for s in range(samples_per_segment):
            if s == 0:
                out.append(poses[seg])
                continue
            t = s / samples_per_segment
            mt = 1.0 - t
            point = (
                mt**3 * p0 + 3.0 * mt**2 * t * c1 + 3.0 * mt * t**2 * c2 + t**3 * p1
            )
            rot = r0 @ rotation_exp(t * delta)
            out.append(Pose7(mt * s0 + t * s1, rot, point))
    out.append(poses[-1])
    return out


def generate_sequence(config: SceneConfig) -> SceneSequence:
    """Sample a full ground-truth sequence from a scene configuration."""
    rng = np.random.default_rng(config.seed)
    rotations, translations, boxes = _place_objects(config, rng)
    cam = _init_camera(config, boxes, rng)

    waypoints = [[Pose7(spec.scale, rotations[k], translations[k]) for k, spec in enumerate(config.objects)]]
    cameras = [cam]
    for i in range(1, config.frames):
        prev_centers = [t.copy() for t in translations]
        for k, spec in enumerate(config.objects):
            others = [boxes[m] for m in range(len(boxes)) if m != k]
            r, t, _ = sample_object_step(rotations[k], translations[k], spec, others, config, rng)
            rotations[k], translations[k] = r, t
            boxes[k] = Box3(t, spec.half_extents, yaw_from_matrix(r))
        moved = [
            bool(np.linalg.norm(translations[k] - prev_centers[k]) > 0.01)
            for k in range(len(config.objects))
        ]
        cam, _ = sample_camera_step(cam, i, boxes, moved, config, rng)
        cameras.append(cam)
        waypoints.append(
            [Pose7(spec.scale, rotations[k], translations[k]) for k, spec in enumerate(config.objects)]
        )

    smoothed = [
        smooth_trajectory([waypoints[i][k] for i in range(config.frames)], 1)
        for k in range(len(config.objects))
    ]
    frames = []
    for i in range(config.frames):
        poses = tuple(smoothed[k][i] for k in range(len(config.objects)))
        gt_boxes = tuple(
            box_from_pose_and_grid(poses[k], spec.canonical_grid)
            for k, spec in enumerate(config.objects)
        )
        visible = []
        for k, spec in enumerate(config.objects):
            world = poses[k].apply(spec.surface)
            if int(visible_surface_mask(world, cameras[i]).sum()) >= config.min_surface_points:
                visible.append(spec.instance_id)
        frames.append(FrameAnnotation(cameras[i], poses, gt_boxes, tuple(visible)))
    return SceneSequence(config, tuple(frames))


def synthesize_detections(
    seq: SceneSequence,
    noise: NoiseModel,
    rng: np.random.Generator,
    max_points: int = 160,
    with_outlier_masks: bool = False,
):
    """Corrupt ground truth into per-frame detection records.

    For each visible object the canonical surface points seen by the camera
    become NOC/depth correspondences: the observed cloud gets camera-frame
    Gaussian noise and a fraction of gross outliers, the NOC side gets the
    same noise scaled into normalized units, whole detections drop out with
    ``dropout_prob``, and occupancy grids have cells flipped at the
    corruption rate. ``gt_noc`` keeps the clean NOC points for training.

    Returns per-frame lists of records; with ``with_outlier_masks`` also a
    dict mapping ``(frame, index_in_frame)`` to injected outlier indices.
    """
    frames_out = []
    masks: dict[tuple[int, int], np.ndarray] = {}
    hidden: set[int] = set()
    for i, ann in enumerate(seq.frames):
        cam = ann.camera
        dets = []
        for k, spec in enumerate(seq.config.objects):
            if spec.instance_id not in ann.visible:
                continue
            if spec.instance_id in hidden:
                if rng.uniform() < noise.dropout_persistence:
                    continue
                hidden.discard(spec.instance_id)
            if rng.uniform() < noise.dropout_prob:
                hidden.add(spec.instance_id)
                continue
            pose = ann.poses[k]
            world = pose.apply(spec.surface)
            vis = np.flatnonzero(visible_surface_mask(world, cam))
            if len(vis) > max_points:
                vis = np.sort(rng.choice(vis, size=max_points, replace=False))
            noc_clean = spec.surface[vis]
            pts_cam = cam.camera_from_world(world[vis])
            obs = pts_cam.copy()
            noc = noc_clean.copy()
            if noise.correspondence_noise_std > 0.0:
                obs = obs + rng.normal(0.0, noise.correspondence_noise_std, obs.shape)
                noc = noc + rng.normal(
                    0.0, noise.correspondence_noise_std / spec.scale, noc.shape
                )
            n_out = int(round(noise.outlier_fraction * len(vis)))
            out_idx = np.zeros(0, dtype=np.intp)
            if n_out:
                out_idx = np.sort(rng.choice(len(vis), size=n_out, replace=False))
                obs[out_idx] = pts_cam.mean(axis=0) + rng.uniform(-1.0, 1.0, (n_out, 3))
            grid = spec.canonical_grid.copy()
            if noise.grid_corruption_rate > 0.0:
                flips = rng.random(grid.shape) < noise.grid_corruption_rate
                grid ^= flips
            objectness = float(rng.uniform(*noise.objectness_range))
            pix = project(pts_cam, cam)
            box2 = Box2(pix.min(axis=0), pix.max(axis=0))
            world_obs = cam.world_from_camera(obs)
            half = np.maximum((world_obs.max(axis=0) - world_obs.min(axis=0)) / 2.0, 0.02)
            box3 = Box3(world_obs.mean(axis=0), half, 0.0)
            det = DetectionRecord(
                frame=i,
                class_name=spec.class_name,
                objectness=objectness,
                box2=box2,
                box3=box3,
                correspondences=Correspondences(noc, obs),
                grid=grid,
                gt_instance=spec.instance_id,
                gt_noc=noc_clean,
            )
            masks[(i, len(dets))] = out_idx
            dets.append(det)
        frames_out.append(dets)
    if with_outlier_masks:
        return frames_out, masks
    return frames_out


def sample_scene_config(
    seed: int,
    frames: int = 25,
    k_min: int = 3,
    k_max: int = 5,
    room_max=(5.0, 4.0, 2.6),
    classes=None,
    n_chairs: int = 2,
    **overrides,
) -> SceneConfig:
    """Draw a random scene with ``n_chairs`` same-size chairs of distinct
    shape variants (relative pose alone cannot tell them apart, so their
    identity hinges on geometry), plus a random assortment from the catalog
    (restricted to ``classes`` when given)."""
    if k_min < 3:
        raise ValueError("a scene needs at least 3 objects")
    if k_max < k_min:
        raise ValueError("k_max must be >= k_min")
    if not 0 <= n_chairs <= CLASS_VARIANTS["chair"]:
        raise ValueError(f"n_chairs must be in [0, {CLASS_VARIANTS['chair']}]")
    rng = np.random.default_rng(seed)
    k = max(int(rng.integers(k_min, k_max + 1)), n_chairs)
    specs = [ObjectSpec.create(i, "chair", variant=i) for i in range(n_chairs)]
    pool = sorted(classes) if classes is not None else sorted(CLASS_HALF_EXTENTS)
    for cls in pool:
        if cls not in CLASS_HALF_EXTENTS:
            raise ValueError(f"unknown object class {cls!r}")
    for i in range(n_chairs, k):
        cls = pool[int(rng.integers(0, len(pool)))]
        variant = int(rng.integers(0, CLASS_VARIANTS[cls]))
        specs.append(ObjectSpec.create(i, cls, variant=variant))
    return SceneConfig(
        objects=tuple(specs),
        room_max=np.asarray(room_max, dtype=np.float64),
        frames=frames,
        seed=seed,
        **overrides,
    )
