"""Tracking metrics: CLEAR-style frame matching, MOTA, precision/recall/F1,
and voxel-grid IoU reporting.

Matching is done per object class (a prediction can only match ground truth
of its own class), so per-class counts sum exactly to the overall counts.
Ground-truth-to-track correspondences persist across frames within a
sequence: a still-valid pairing is kept before any new assignment is made,
and a ground-truth object whose matched track identity changes counts as one
mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import UndefinedMetricError
from .geometry import iou3d_grids

MATCH_RADIUS = 0.4
_INFEASIBLE = 1e9


@dataclass
class MotCounts:
    """Additive CLEAR counters."""

    m: int = 0
    fp: int = 0
    mme: int = 0
    gt: int = 0
    tp: int = 0

    def add(self, other: "MotCounts") -> None:
        self.m += other.m
        self.fp += other.fp
        self.mme += other.mme
        self.gt += other.gt
        self.tp += other.tp


def match_frame(gt, preds, radius: float = MATCH_RADIUS, carry: dict | None = None):
    """Match one frame of ground truth against predictions.

    ``gt`` is a list of ``(gt_id, center)`` and ``preds`` a list of
    ``(track_id, center)``; centers are world-frame 3-vectors. Previous
    correspondences in ``carry`` (gt_id -> track_id) are kept when still
    within ``radius``; the rest are matched by minimal total distance.

    Returns ``(matches, counts, carry)`` where matches maps gt_id ->
    track_id for this frame and carry is the updated correspondence map.
    """
    carry = dict(carry or {})
    gt_ids = [g[0] for g in gt]
    gt_centers = [np.asarray(g[1], dtype=np.float64) for g in gt]
    pred_ids = [p[0] for p in preds]
    pred_centers = [np.asarray(p[1], dtype=np.float64) for p in preds]
    pred_index = {tid: k for k, tid in enumerate(pred_ids)}

    matches: dict = {}
    used_preds: set = set()
    for a, gid in enumerate(gt_ids):
        tid = carry.get(gid)
        if tid is None or tid not in pred_index or tid in used_preds:
            continue
        b = pred_index[tid]
        if np.linalg.norm(gt_centers[a] - pred_centers[b]) <= radius:
            matches[gid] = tid
            used_preds.add(tid)

    free_gt = [a for a, gid in enumerate(gt_ids) if gid not in matches]
    free_pred = [b for b, tid in enumerate(pred_ids) if tid not in used_preds]
    if free_gt and free_pred:
        cost = np.full((len(free_gt), len(free_pred)), _INFEASIBLE)
        for i, a in enumerate(free_gt):
            for j, b in enumerate(free_pred):
                d = float(np.linalg.norm(gt_centers[a] - pred_centers[b]))
                if d <= radius:
                    cost[i, j] = d
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            if cost[i, j] < _INFEASIBLE / 2:
                gid = gt_ids[free_gt[i]]
                tid = pred_ids[free_pred[j]]
                matches[gid] = tid
                used_preds.add(tid)

    counts = MotCounts(gt=len(gt_ids), tp=len(matches))
    counts.m = len(gt_ids) - len(matches)
    counts.fp = len(pred_ids) - len(used_preds)
    for gid, tid in matches.items():
        old = carry.get(gid)
        if old is not None and old != tid:
            counts.mme += 1
        carry[gid] = tid
    return matches, counts, carry


def mota(m: int, fp: int, mme: int, gt_count: int) -> float:
    """``1 - (misses + false positives + mismatches) / ground truth``."""
    if gt_count <= 0:
        raise UndefinedMetricError("MOTA undefined without ground-truth objects")
    return 1.0 - (m + fp + mme) / gt_count


def prf(tp: int, m: int, fp: int):
    """Precision, recall and F1 from matched counts.

    Returns ``(precision, recall, f1, degenerate)``; a zero denominator
    reports the affected metric as 0 with the flag set.
    """
    degenerate = False
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, degenerate = 0.0, True
    if tp + m > 0:
        recall = tp / (tp + m)
    else:
        recall, degenerate = 0.0, True
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1, degenerate = 0.0, True
    return precision, recall, f1, degenerate


@dataclass
class TrackReport:
    """Accumulated tracking scores with a per-class breakdown."""

    m: int
    fp: int
    mme: int
    gt_count: int
    tp: int
    mota: float
    precision: float
    recall: float
    f1: float
    per_class: dict = field(default_factory=dict)
    mean_grid_iou: float | None = None
    grid_iou_per_class: dict = field(default_factory=dict)
    degenerate_prf: bool = False

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "fp": self.fp,
            "mme": self.mme,
            "gt_count": self.gt_count,
            "tp": self.tp,
            "mota": self.mota,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class": self.per_class,
            "mean_grid_iou": self.mean_grid_iou,
            "grid_iou_per_class": self.grid_iou_per_class,
            "degenerate_prf": self.degenerate_prf,
        }

    def format_table(self) -> str:
        header = f"{'':<12}{'m':>8}{'fp':>8}{'mme':>8}{'F1':>8}{'Precision':>11}{'Recall':>8}{'MOTA(%)':>9}"
        lines = [header]

        def row(name, m, fp, mme, f1, p, r, mota_v):
            return (
                f"{name:<12}{m:>8}{fp:>8}{mme:>8}{f1:>8.3f}{p:>11.3f}{r:>8.3f}{100 * mota_v:>9.1f}"
            )

        for cls in sorted(self.per_class):
            c = self.per_class[cls]
            lines.append(
                row(cls, c["m"], c["fp"], c["mme"], c["f1"], c["precision"], c["recall"], c["mota"])
            )
        lines.append(
            row("overall", self.m, self.fp, self.mme, self.f1, self.precision, self.recall, self.mota)
        )
        return "\n".join(lines)


def _class_stats(counts: MotCounts) -> dict:
    p, r, f1, _ = prf(counts.tp, counts.m, counts.fp)
    stats = {
        "m": counts.m,
        "fp": counts.fp,
        "mme": counts.mme,
        "gt": counts.gt,
        "tp": counts.tp,
        "precision": p,
        "recall": r,
        "f1": f1,
    }
    stats["mota"] = mota(counts.m, counts.fp, counts.mme, counts.gt) if counts.gt > 0 else 0.0
    return stats


def evaluate_tracking(sequence_pairs, radius: float = MATCH_RADIUS) -> TrackReport:
    """Accumulated report over sequences.

    ``sequence_pairs`` is an iterable of ``(gt_frames, pred_frames)``; each
    element is a per-frame list whose entries are ``(id, class_name,
    center)``. Correspondence carry is per sequence and per class. Counts
    accumulate over all sequences before any ratio is formed.
    """
    per_class: dict[str, MotCounts] = {}
    for gt_frames, pred_frames in sequence_pairs:
        carries: dict[str, dict] = {}
        n = max(len(gt_frames), len(pred_frames))
        for t in range(n):
            gt_t = gt_frames[t] if t < len(gt_frames) else []
            pr_t = pred_frames[t] if t < len(pred_frames) else []
            classes = sorted({e[1] for e in gt_t} | {e[1] for e in pr_t})
            for cls in classes:
                gt_c = [(e[0], e[2]) for e in gt_t if e[1] == cls]
                pr_c = [(e[0], e[2]) for e in pr_t if e[1] == cls]
                _, counts, carry = match_frame(
                    gt_c, pr_c, radius=radius, carry=carries.get(cls)
                )
                carries[cls] = carry
                per_class.setdefault(cls, MotCounts()).add(counts)

    total = MotCounts()
    for counts in per_class.values():
        total.add(counts)
    if total.gt <= 0:
        raise UndefinedMetricError("no ground-truth objects in any sequence")
    p, r, f1, degenerate = prf(total.tp, total.m, total.fp)
    return TrackReport(
        m=total.m,
        fp=total.fp,
        mme=total.mme,
        gt_count=total.gt,
        tp=total.tp,
        mota=mota(total.m, total.fp, total.mme, total.gt),
        precision=p,
        recall=r,
        f1=f1,
        per_class={cls: _class_stats(c) for cls, c in per_class.items()},
        degenerate_prf=degenerate,
    )


def tracklets_to_frames(tracklets, n_frames: int):
    """Per-frame ``(track_id, class_name, center)`` lists from tracklets."""
    frames = [[] for _ in range(n_frames)]
    for tr in tracklets:
        cls = tr.class_name
        for frame, _, pose in tr.entries:
            if 0 <= frame < n_frames:
                frames[frame].append((tr.instance_id, cls, pose.translation))
    return frames


def grid_iou_report(pairs):
    """Mean voxel IoU of (predicted grid, ground-truth grid, class) triples.

    Returns ``(overall_mean, per_class_means)``; objects without a match are
    simply not in ``pairs``. An empty input yields ``(None, {})``.
    """
    if not pairs:
        return None, {}
    per_class: dict[str, list[float]] = {}
    values = []
    for pred, gt, cls in pairs:
        v = iou3d_grids(pred, gt)
        values.append(v)
        per_class.setdefault(cls, []).append(v)
    overall = float(np.mean(values))
    return overall, {cls: float(np.mean(vs)) for cls, vs in per_class.items()}
