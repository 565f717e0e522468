"""Glue between the stages: detections -> poses -> graph -> tracklets.

Node indexing convention: wherever tracklets reference a detection by node
index, the index points into the flattened per-frame detection lists (frames
in order, in-frame order preserved), after filtering. Re-running the same
filter over the same detection files therefore reproduces the indexing.
"""

from __future__ import annotations

import numpy as np

from .association import (
    TrackGraph,
    assemble_tracklets,
    build_graph,
    filter_detections,
    heuristic_tracker,
    label_graph,
)
from .errors import DegenerateGeometryError, PoseFailureError
from .networks import TrackerNetwork
from .pose import OutlierParams, estimate_pose
from .simulator import SceneSequence, box_from_pose_and_grid


def detection_seed(base_seed: int, frame: int, index: int) -> int:
    """Stable per-detection RANSAC seed."""
    return int(np.random.SeedSequence([base_seed, frame, index]).generate_state(1)[0])


def estimate_detection_poses(frames, cameras, params: OutlierParams, base_seed: int) -> int:
    """Fit world poses for every detection in place.

    Detections whose fit fails keep ``pose=None`` and stay isolated later;
    successful fits also refresh ``box3`` from the pose and occupancy grid.
    Returns the number of failures.
    """
    failures = 0
    for t, dets in enumerate(frames):
        for k, det in enumerate(dets):
            try:
                det.pose = estimate_pose(det, cameras[t], params, detection_seed(base_seed, t, k))
                det.box3 = box_from_pose_and_grid(det.pose, det.grid)
            except (PoseFailureError, DegenerateGeometryError):
                det.pose = None
                failures += 1
    return failures


def flatten_frames(frames) -> list:
    out = []
    for dets in frames:
        out.extend(dets)
    return out


def prepare_frames(
    frames,
    cameras,
    params: OutlierParams,
    base_seed: int,
    objectness_threshold: float = 0.35,
    nms_iou: float = 0.5,
):
    """Filter raw detections and estimate their poses."""
    filtered = filter_detections(frames, objectness_threshold, nms_iou)
    estimate_detection_poses(filtered, cameras, params, base_seed)
    return filtered


def labeled_training_graph(
    seq: SceneSequence, frames, window: int = 5, tau: float = 0.05
) -> TrackGraph:
    """Graph with GT labels and the canonical grids for the loss terms."""
    graph = build_graph(frames, window=window)
    graph.gt_grids = {spec.instance_id: spec.canonical_grid for spec in seq.config.objects}
    return label_graph(graph, seq.gt_boxes_by_frame(), tau=tau)


def track_with_network(frames, net: TrackerNetwork, threshold: float = 0.5):
    """Run the learned tracker over prepared (posed) detection frames."""
    graph = build_graph(frames, window=net.config.window)
    probs = net.forward(graph).data
    return assemble_tracklets(graph, probs, threshold=threshold)


def track_with_heuristic(frames, gate_radius: float = 0.5):
    return heuristic_tracker(frames, gate_radius=gate_radius)
