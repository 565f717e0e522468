"""Temporal data association: detection filtering, track-graph construction,
ground-truth labeling, and tracklet assembly from classified edges.

Node indices are positions in the graph's flattened detection list, ordered
by frame and then by position within the frame. Detections without a pose
become isolated nodes: they get no edges and never enter a tracklet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box2, Box3, Pose7, iou2d, iou3d_boxes
from .networks import edge_feature
from .pose import Correspondences

OBJECTNESS_THRESHOLD = 0.35
GT_IOU2D_THRESHOLD = 0.35
GT_IOU3D_THRESHOLD = 0.05
NMS_IOU_THRESHOLD = 0.5
EDGE_ACTIVE_THRESHOLD = 0.5


@dataclass
class DetectionRecord:
    """One per-frame object observation."""

    frame: int
    class_name: str
    objectness: float
    box2: Box2
    box3: Box3
    correspondences: Correspondences
    grid: np.ndarray
    pose: Pose7 | None = None
    gt_instance: int | None = None
    gt_noc: np.ndarray | None = None

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError("frame must be >= 0")
        if not 0.0 <= self.objectness <= 1.0:
            raise ValueError(f"objectness must be in [0, 1], got {self.objectness}")


@dataclass
class TrackGraph:
    """Detections plus the temporal edges connecting them within a window."""

    detections: list[DetectionRecord]
    edges: np.ndarray  # (E, 2) node indices, frame[j] > frame[i]
    edge_features: np.ndarray  # (E, 8)
    window: int = 5
    labels: np.ndarray | None = None  # (E,) in {0, 1}
    node_instances: list[int | None] | None = None
    gt_grids: dict[int, np.ndarray] | None = None

    @property
    def num_nodes(self) -> int:
        return len(self.detections)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def frames(self) -> np.ndarray:
        return np.array([d.frame for d in self.detections], dtype=np.intp)


@dataclass
class Tracklet:
    """Frame-ordered chain of detections sharing one identity."""

    instance_id: int
    entries: list[tuple[int, int, Pose7]] = field(default_factory=list)  # (frame, node, pose)
    classes: list[str] = field(default_factory=list)

    @property
    def class_name(self) -> str:
        """Majority class of the member detections (ties break alphabetically)."""
        counts: dict[str, int] = {}
        for c in self.classes:
            counts[c] = counts.get(c, 0) + 1
        return min(counts, key=lambda c: (-counts[c], c)) if counts else ""

    def add(self, frame: int, node: int, pose: Pose7, class_name: str) -> None:
        if self.entries and frame <= self.entries[-1][0]:
            raise ValueError("tracklet frames must be strictly increasing")
        self.entries.append((int(frame), int(node), pose))
        self.classes.append(class_name)

    def last_frame(self) -> int:
        return self.entries[-1][0]

    def last_center(self) -> np.ndarray:
        return self.entries[-1][2].translation


def filter_detections(
    frames,
    objectness_threshold: float = OBJECTNESS_THRESHOLD,
    nms_iou: float = NMS_IOU_THRESHOLD,
    gt_boxes=None,
    gt_iou_threshold: float = GT_IOU2D_THRESHOLD,
):
    """Score thresholding, per-frame 2D NMS, and the optional GT gate.

    ``frames`` is a sequence of per-frame detection lists. When ``gt_boxes``
    (per-frame lists of :class:`Box2`) is given, detections whose best 2D IoU
    with every ground-truth box falls below ``gt_iou_threshold`` are dropped,
    mirroring the evaluation protocol for learned detectors.
    """
    out = []
    for t, dets in enumerate(frames):
        kept = [d for d in dets if d.objectness >= objectness_threshold]
        order = sorted(range(len(kept)), key=lambda k: (-kept[k].objectness, k))
        selected: list[int] = []
        for k in order:
            if all(iou2d(kept[k].box2, kept[s].box2) <= nms_iou for s in selected):
                selected.append(k)
        survivors = [kept[k] for k in sorted(selected)]
        if gt_boxes is not None:
            boxes = gt_boxes[t] if t < len(gt_boxes) else []
            survivors = [
                d
                for d in survivors
                if boxes and max(iou2d(d.box2, g) for g in boxes) >= gt_iou_threshold
            ]
        out.append(survivors)
    return out


def build_graph(frames, window: int = 5) -> TrackGraph:
    """Connect detections across distinct frames with gap <= window - 1.

    Every cross-frame pair of posed detections within the window becomes one
    edge, stored with the earlier detection first. Pose-less detections
    remain isolated nodes.
    """
    detections: list[DetectionRecord] = []
    for dets in frames:
        detections.extend(dets)
    frame_ids = [d.frame for d in detections]
    if any(b < a for a, b in zip(frame_ids, frame_ids[1:])):
        raise ValueError("detections must be supplied sorted by frame")
    n = len(detections)
    edges = []
    feats = []
    for i in range(n):
        if detections[i].pose is None:
            continue
        for j in range(i + 1, n):
            gap = frame_ids[j] - frame_ids[i]
            if gap > window - 1:
                break
            if gap < 1 or detections[j].pose is None:
                continue
            edges.append((i, j))
            feats.append(
                edge_feature(
                    detections[i].pose, frame_ids[i], detections[j].pose, frame_ids[j]
                ).as_array()
            )
    edges_arr = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    feats_arr = np.asarray(feats, dtype=np.float64).reshape(-1, 8)
    return TrackGraph(detections, edges_arr, feats_arr, window=window)


def label_graph(graph: TrackGraph, gt_boxes_by_frame, tau: float = GT_IOU3D_THRESHOLD) -> TrackGraph:
    """Assign GT instances by maximum 3D IoU and label the edges.

    ``gt_boxes_by_frame`` maps a frame index to a list of ``(instance_id,
    Box3)`` pairs. Detections whose best IoU stays below ``tau`` remain
    unmatched and lose all their edges. An edge is active exactly when both
    endpoints carry the same instance id.
    """
    instances: list[int | None] = []
    for det in graph.detections:
        candidates = gt_boxes_by_frame.get(det.frame, [])
        best_iou = 0.0
        best_id = None
        for instance_id, box in candidates:
            v = iou3d_boxes(det.box3, box)
            if v > best_iou:
                best_iou = v
                best_id = instance_id
        instances.append(best_id if best_iou >= tau else None)

    keep = np.asarray(
        [
            e
            for e, (i, j) in enumerate(graph.edges)
            if instances[i] is not None and instances[j] is not None
        ],
        dtype=np.intp,
    )
    edges = graph.edges[keep]
    labels = np.array(
        [1.0 if instances[i] == instances[j] else 0.0 for i, j in edges], dtype=np.float64
    )
    return TrackGraph(
        graph.detections,
        edges,
        graph.edge_features[keep],
        window=graph.window,
        labels=labels,
        node_instances=instances,
        gt_grids=graph.gt_grids,
    )


def assemble_tracklets(
    graph: TrackGraph, edge_probs: np.ndarray, threshold: float = EDGE_ACTIVE_THRESHOLD
) -> list[Tracklet]:
    """Greedy frame-by-frame tracklet growth over active edges.

    Edges with probability above ``threshold`` are active. Frames are
    processed in order; candidate extensions are taken globally in ascending
    world center distance, each tracklet extending to at most one detection
    per frame and each detection joining at most one tracklet. Posed
    detections that remain unclaimed start new tracklets.
    """
    edge_probs = np.asarray(edge_probs, dtype=np.float64).reshape(-1)
    if edge_probs.shape[0] != graph.num_edges:
        raise ValueError(f"{edge_probs.shape[0]} probabilities for {graph.num_edges} edges")
    active_into: dict[int, list[int]] = {}
    for e, (i, j) in enumerate(graph.edges):
        if edge_probs[e] > threshold:
            active_into.setdefault(int(j), []).append(int(i))

    frames = graph.frames()
    owner: dict[int, int] = {}
    tracklets: list[Tracklet] = []
    for t in np.unique(frames):
        nodes_t = [
            int(k)
            for k in np.flatnonzero(frames == t)
            if graph.detections[k].pose is not None
        ]
        candidates = []
        for j in nodes_t:
            cj = graph.detections[j].pose.translation
            for i in active_into.get(j, []):
                if i in owner:
                    d = float(np.linalg.norm(graph.detections[i].pose.translation - cj))
                    candidates.append((d, i, j))
        candidates.sort()
        extended: set[int] = set()
        claimed: set[int] = set()
        for d, i, j in candidates:
            tr = owner[i]
            if tr in extended or j in claimed:
                continue
            det = graph.detections[j]
            tracklets[tr].add(int(t), j, det.pose, det.class_name)
            owner[j] = tr
            extended.add(tr)
            claimed.add(j)
        for j in nodes_t:
            if j in claimed:
                continue
            det = graph.detections[j]
            tr = Tracklet(instance_id=len(tracklets))
            tr.add(int(t), j, det.pose, det.class_name)
            tracklets.append(tr)
            owner[j] = tr.instance_id
    return tracklets


def heuristic_tracker(frames, gate_radius: float = 0.5) -> list[Tracklet]:
    """Greedy frame-to-frame nearest-center matching, the no-graph baseline.

    Tracklets extend only from the immediately preceding frame, by minimal
    world center distance within ``gate_radius``; everything else starts a
    new tracklet. Crossing objects inside the gate can swap identities, which
    is the failure mode the learned tracker is meant to avoid.
    """
    tracklets: list[Tracklet] = []
    prev_tails: list[int] = []
    node_offset = 0
    for dets in frames:
        posed = [(k, d) for k, d in enumerate(dets) if d.pose is not None]
        candidates = []
        for k, det in posed:
            c = det.pose.translation
            for tr in prev_tails:
                d = float(np.linalg.norm(tracklets[tr].last_center() - c))
                if d <= gate_radius:
                    candidates.append((d, tr, k))
        candidates.sort()
        extended: set[int] = set()
        claimed: set[int] = set()
        for d, tr, k in candidates:
            if tr in extended or k in claimed:
                continue
            det = dets[k]
            tracklets[tr].add(det.frame, node_offset + k, det.pose, det.class_name)
            extended.add(tr)
            claimed.add(k)
        new_tails = sorted(extended)
        for k, det in posed:
            if k in claimed:
                continue
            tr = Tracklet(instance_id=len(tracklets))
            tr.add(det.frame, node_offset + k, det.pose, det.class_name)
            tracklets.append(tr)
            new_tails.append(tr.instance_id)
        prev_tails = new_tails
        node_offset += len(dets)
    return tracklets
