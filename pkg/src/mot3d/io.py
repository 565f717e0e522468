"""Versioned on-disk formats for scenes, detections and tracklets.

Each scene or detection set is a pair of files: a canonical JSON manifest
(`sorted keys, no whitespace`) plus a binary sidecar holding the bulk data.
Point arrays are little-endian float64 rows of 3; occupancy grids are
bit-packed (4096 bytes per 32^3 grid). Writing is canonical, so
write -> read -> write reproduces byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .association import DetectionRecord, Tracklet
from .geometry import Box2, Box3, CameraModel, Pose7, GRID_RESOLUTION
from .pose import Correspondences
from .simulator import (
    FrameAnnotation,
    NoiseModel,
    ObjectSpec,
    SceneConfig,
    SceneSequence,
)

SCENE_VERSION = 1
DETECTIONS_VERSION = 1
TRACKLETS_VERSION = 1
INDEX_VERSION = 1

_GRID_BYTES = GRID_RESOLUTION**3 // 8


def dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())


class _BlobWriter:
    def __init__(self):
        self.chunks: list[bytes] = []
        self.offset = 0

    def add(self, data: bytes) -> int:
        off = self.offset
        self.chunks.append(data)
        self.offset += len(data)
        return off

    def add_points(self, pts: np.ndarray) -> dict:
        pts = np.ascontiguousarray(pts, dtype="<f8")
        return {"offset": self.add(pts.tobytes()), "rows": int(pts.shape[0])}

    def add_grid(self, grid: np.ndarray) -> dict:
        packed = np.packbits(np.asarray(grid, dtype=bool).ravel())
        return {"offset": self.add(packed.tobytes())}

    def bytes(self) -> bytes:
        return b"".join(self.chunks)


def _read_points(blob: bytes, ref: dict) -> np.ndarray:
    n = ref["rows"]
    a = np.frombuffer(blob, dtype="<f8", count=3 * n, offset=ref["offset"])
    return a.astype(np.float64).reshape(n, 3)


def _read_grid(blob: bytes, ref: dict) -> np.ndarray:
    raw = np.frombuffer(blob, dtype=np.uint8, count=_GRID_BYTES, offset=ref["offset"])
    bits = np.unpackbits(raw)[: GRID_RESOLUTION**3]
    return bits.astype(bool).reshape((GRID_RESOLUTION,) * 3)


def _pose_dict(p: Pose7) -> dict:
    return {
        "scale": p.scale,
        "rotation": [float(v) for v in p.rotation.ravel()],
        "translation": [float(v) for v in p.translation],
    }


def _pose_from(d: dict) -> Pose7:
    return Pose7(d["scale"], np.array(d["rotation"]).reshape(3, 3), np.array(d["translation"]))


def _box3_dict(b: Box3) -> dict:
    return {
        "center": [float(v) for v in b.center],
        "half_extents": [float(v) for v in b.half_extents],
        "yaw": b.yaw,
    }


def _box3_from(d: dict) -> Box3:
    return Box3(np.array(d["center"]), np.array(d["half_extents"]), d["yaw"])


def _box2_dict(b: Box2) -> dict:
    return {"min": [float(v) for v in b.min], "max": [float(v) for v in b.max]}


def _box2_from(d: dict) -> Box2:
    return Box2(np.array(d["min"]), np.array(d["max"]))


def _intrinsics_dict(c: CameraModel) -> dict:
    return {
        "fx": c.fx,
        "fy": c.fy,
        "cx": c.cx,
        "cy": c.cy,
        "width": c.width,
        "height": c.height,
    }


def _extrinsic_dict(c: CameraModel) -> dict:
    return {
        "rotation": [float(v) for v in c.rotation.ravel()],
        "translation": [float(v) for v in c.translation],
    }


def _camera_from(intr: dict, extr: dict) -> CameraModel:
    return CameraModel(
        intr["fx"],
        intr["fy"],
        intr["cx"],
        intr["cy"],
        np.array(extr["rotation"]).reshape(3, 3),
        np.array(extr["translation"]),
        intr["width"],
        intr["height"],
    )


def scene_paths(base) -> tuple[Path, Path]:
    base = Path(base)
    return base.with_suffix(".scene.json"), base.with_suffix(".scene.bin")


def save_scene(base, seq: SceneSequence) -> None:
    """Write ``<base>.scene.json`` plus its binary sidecar."""
    cfg = seq.config
    blob = _BlobWriter()
    objects = []
    for spec in cfg.objects:
        objects.append(
            {
                "instance": spec.instance_id,
                "class": spec.class_name,
                "half_extents": [float(v) for v in spec.half_extents],
                "scale": spec.scale,
                "canonical_half_extents": [float(v) for v in spec.canonical_half_extents],
                "variant": spec.variant,
                "grid": blob.add_grid(spec.canonical_grid),
            }
        )
    frames = []
    for ann in seq.frames:
        frames.append(
            {
                "camera": _extrinsic_dict(ann.camera),
                "poses": [_pose_dict(p) for p in ann.poses],
                "boxes": [_box3_dict(b) for b in ann.boxes],
                "visible": list(ann.visible),
            }
        )
    doc = {
        "format_version": SCENE_VERSION,
        "seed": cfg.seed,
        "room": {
            "min": [float(v) for v in cfg.room_min],
            "max": [float(v) for v in cfg.room_max],
        },
        "obstacles": [_box3_dict(b) for b in cfg.obstacles],
        "params": {
            "frames": cfg.frames,
            "sigma": cfg.sigma,
            "phi_obj": cfg.phi_obj,
            "phi_cam": cfg.phi_cam,
            "eps0": cfg.eps0,
            "d_star": cfg.d_star,
            "sigma0": cfg.sigma0,
            "n_max": cfg.n_max,
            "interest_threshold": cfg.interest_threshold,
            "min_surface_points": cfg.min_surface_points,
        },
        "camera_intrinsics": _intrinsics_dict(cfg.camera),
        "objects": objects,
        "frames": frames,
    }
    jpath, bpath = scene_paths(base)
    bpath.write_bytes(blob.bytes())
    dump_json(jpath, doc)


def load_scene(base) -> SceneSequence:
    jpath, bpath = scene_paths(base)
    doc = load_json(jpath)
    if doc.get("format_version") != SCENE_VERSION:
        raise ValueError(f"unsupported scene format version {doc.get('format_version')}")
    blob = bpath.read_bytes()
    specs = []
    for o in doc["objects"]:
        specs.append(
            ObjectSpec(
                o["instance"],
                o["class"],
                np.array(o["half_extents"]),
                o["scale"],
                _read_grid(blob, o["grid"]),
                np.array(o["canonical_half_extents"]),
                o.get("variant", 0),
            )
        )
    intr = doc["camera_intrinsics"]
    cam_template = CameraModel(
        intr["fx"], intr["fy"], intr["cx"], intr["cy"], width=intr["width"], height=intr["height"]
    )
    p = doc["params"]
    config = SceneConfig(
        objects=tuple(specs),
        room_min=np.array(doc["room"]["min"]),
        room_max=np.array(doc["room"]["max"]),
        obstacles=tuple(_box3_from(b) for b in doc["obstacles"]),
        frames=p["frames"],
        sigma=p["sigma"],
        phi_obj=p["phi_obj"],
        phi_cam=p["phi_cam"],
        eps0=p["eps0"],
        d_star=p["d_star"],
        sigma0=p["sigma0"],
        n_max=p["n_max"],
        interest_threshold=p["interest_threshold"],
        min_surface_points=p["min_surface_points"],
        camera=cam_template,
        seed=doc["seed"],
    )
    frames = []
    for f in doc["frames"]:
        frames.append(
            FrameAnnotation(
                camera=_camera_from(intr, f["camera"]),
                poses=tuple(_pose_from(p) for p in f["poses"]),
                boxes=tuple(_box3_from(b) for b in f["boxes"]),
                visible=tuple(f["visible"]),
            )
        )
    return SceneSequence(config, tuple(frames))


def detection_paths(base) -> tuple[Path, Path]:
    base = Path(base)
    return base.with_suffix(".det.json"), base.with_suffix(".det.bin")


def save_detections(base, frames, cameras, noise: NoiseModel | None = None, name: str = "") -> None:
    """Write per-frame detection records with their cameras.

    ``frames`` is a list of per-frame DetectionRecord lists; ``cameras`` the
    per-frame camera models (intrinsics shared, extrinsics per frame).
    """
    blob = _BlobWriter()
    frame_docs = []
    for t, dets in enumerate(frames):
        records = []
        for det in dets:
            rec = {
                "frame": det.frame,
                "class": det.class_name,
                "objectness": det.objectness,
                "box2": _box2_dict(det.box2),
                "box3": _box3_dict(det.box3),
                "pose": None if det.pose is None else _pose_dict(det.pose),
                "gt_instance": det.gt_instance,
                "noc": blob.add_points(det.correspondences.noc),
                "obs": blob.add_points(det.correspondences.obs),
                "gt_noc": None if det.gt_noc is None else blob.add_points(det.gt_noc),
                "grid": blob.add_grid(det.grid),
            }
            records.append(rec)
        frame_docs.append({"camera": _extrinsic_dict(cameras[t]), "detections": records})
    doc = {
        "format_version": DETECTIONS_VERSION,
        "sequence": name,
        "camera_intrinsics": _intrinsics_dict(cameras[0]) if cameras else None,
        "noise": None
        if noise is None
        else {
            "correspondence_noise_std": noise.correspondence_noise_std,
            "outlier_fraction": noise.outlier_fraction,
            "dropout_prob": noise.dropout_prob,
            "objectness_range": list(noise.objectness_range),
            "grid_corruption_rate": noise.grid_corruption_rate,
        },
        "frames": frame_docs,
    }
    jpath, bpath = detection_paths(base)
    bpath.write_bytes(blob.bytes())
    dump_json(jpath, doc)


def load_detections(base):
    """Read back ``(frames, cameras, name)`` written by :func:`save_detections`."""
    jpath, bpath = detection_paths(base)
    doc = load_json(jpath)
    if doc.get("format_version") != DETECTIONS_VERSION:
        raise ValueError(f"unsupported detections format version {doc.get('format_version')}")
    blob = bpath.read_bytes()
    intr = doc["camera_intrinsics"]
    frames = []
    cameras = []
    for f in doc["frames"]:
        cameras.append(_camera_from(intr, f["camera"]))
        dets = []
        for r in f["detections"]:
            dets.append(
                DetectionRecord(
                    frame=r["frame"],
                    class_name=r["class"],
                    objectness=r["objectness"],
                    box2=_box2_from(r["box2"]),
                    box3=_box3_from(r["box3"]),
                    correspondences=Correspondences(
                        _read_points(blob, r["noc"]), _read_points(blob, r["obs"])
                    ),
                    grid=_read_grid(blob, r["grid"]),
                    pose=None if r["pose"] is None else _pose_from(r["pose"]),
                    gt_instance=r["gt_instance"],
                    gt_noc=None if r["gt_noc"] is None else _read_points(blob, r["gt_noc"]),
                )
            )
        frames.append(dets)
    return frames, cameras, doc.get("sequence", "")


def save_tracklets(path, tracklets, name: str, n_frames: int) -> None:
    doc = {
        "format_version": TRACKLETS_VERSION,
        "sequence": name,
        "n_frames": n_frames,
        "tracklets": [
            {
                "id": tr.instance_id,
                "class": tr.class_name,
                "entries": [
                    {"frame": frame, "node": node, "pose": _pose_dict(pose)}
                    for frame, node, pose in tr.entries
                ],
            }
            for tr in tracklets
        ],
    }
    dump_json(path, doc)


def load_tracklets(path):
    doc = load_json(path)
    if doc.get("format_version") != TRACKLETS_VERSION:
        raise ValueError(f"unsupported tracklets format version {doc.get('format_version')}")
    tracklets = []
    for td in doc["tracklets"]:
        tr = Tracklet(instance_id=td["id"])
        for e in td["entries"]:
            tr.add(e["frame"], e["node"], _pose_from(e["pose"]), td["class"])
        tracklets.append(tr)
    return tracklets, doc["sequence"], doc["n_frames"]


def save_index(path, names) -> None:
    dump_json(path, {"format_version": INDEX_VERSION, "sequences": list(names)})


def load_index(path) -> list[str]:
    doc = load_json(path)
    if doc.get("format_version") != INDEX_VERSION:
        raise ValueError(f"unsupported index format version {doc.get('format_version')}")
    return list(doc["sequences"])
