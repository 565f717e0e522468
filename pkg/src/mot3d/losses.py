"""Loss functions for correspondence, reconstruction and edge classification.

Each loss is a single gradient-carrying node: the forward pass computes the
scalar value and the backward pass scatters the analytic derivative onto the
prediction tensor, so they plug directly into the autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, _accumulate

PROB_CLAMP = 1e-7

# 180 degree turn about the up (z) axis of normalized object space.
_FLIP_XY = np.array([-1.0, -1.0, 1.0])


@dataclass(frozen=True)
class LossWeights:
    """Weights combining the loss terms; per-set weights default to the
    imbalance ratios (see :func:`default_w_occ` / :func:`default_w_act`)."""

    noc_weight: float = 3.0
    rec_weight: float = 0.75
    w_occ: float | None = None
    w_act: float | None = None

    def __post_init__(self):
        for name in ("noc_weight", "rec_weight", "w_occ", "w_act"):
            v = getattr(self, name)
            if v is not None and v <= 0.0:
                raise ValueError(f"{name} must be > 0, got {v}")


def default_w_occ(gt_grid: np.ndarray, lo: float = 1.0, hi: float = 50.0) -> float:
    """Occupied-cell weight: free/occupied ratio clamped to [lo, hi]."""
    occ = int(np.count_nonzero(gt_grid))
    free = gt_grid.size - occ
    if occ == 0:
        return hi
    return float(np.clip(free / occ, lo, hi))


def default_w_act(labels: np.ndarray, lo: float = 1.0, hi: float = 100.0) -> float:
    """Active-edge weight: non-active/active ratio clamped to [lo, hi]."""
    labels = np.asarray(labels)
    act = int(np.count_nonzero(labels))
    non = labels.size - act
    if act == 0:
        return hi
    return float(np.clip(non / act, lo, hi))


def _huber(e: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(e)
    return np.where(a <= delta, 0.5 * e**2, delta * (a - 0.5 * delta))


def _huber_grad(e: np.ndarray, delta: float) -> np.ndarray:
    return np.where(np.abs(e) <= delta, e, delta * np.sign(e))


def loss_noc(pred, gt: np.ndarray, object_class: str, delta: float = 1.0) -> Tensor:
    """Smooth-L1 correspondence loss, mean over all elements.

    For the class ``table`` the target is additionally considered rotated by
    180 degrees about the up axis and the smaller loss is kept, so a
    half-turn-symmetric prediction is not penalized.
    """
    pred = as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.data.shape != gt.shape:
        raise ValueError(f"loss_noc: prediction {pred.data.shape} vs target {gt.shape}")
    if gt.shape[-1] != 3:
        raise ValueError("loss_noc operates on 3-vector maps")
    targets = [gt]
    if object_class == "table":
        targets.append(gt * _FLIP_XY)
    values = []
    for t in targets:
        values.append(_huber(pred.data - t, delta).mean())
    best = int(np.argmin(values))
    chosen = targets[best]
    out = Tensor(np.float64(values[best]), parents=(pred,))

    def backward(g):
        _accumulate(pred, float(g) * _huber_grad(pred.data - chosen, delta) / pred.data.size)

    out._backward_fn = backward
    return out


def _balanced_bce(pred: Tensor, positive_mask: np.ndarray, w_pos: float) -> Tensor:
    """w_pos * mean over positives of -ln p + mean over negatives of -ln(1-p),
    with probabilities clamped to [PROB_CLAMP, 1 - PROB_CLAMP]. Empty sets
    contribute zero."""
    p = np.clip(pred.data, PROB_CLAMP, 1.0 - PROB_CLAMP)
    interior = (pred.data > PROB_CLAMP) & (pred.data < 1.0 - PROB_CLAMP)
    pos = positive_mask
    neg = ~positive_mask
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    value = 0.0
    if n_pos:
        value += w_pos * float(-np.log(p[pos]).mean())
    if n_neg:
        value += float(-np.log(1.0 - p[neg]).mean())
    out = Tensor(np.float64(value), parents=(pred,))

    def backward(g):
        if not pred.requires_grad:
            return
        gp = np.zeros_like(p)
        if n_pos:
            gp[pos] = -w_pos / (p[pos] * n_pos)
        if n_neg:
            gp[neg] = 1.0 / ((1.0 - p[neg]) * n_neg)
        _accumulate(pred, float(g) * gp * interior)

    out._backward_fn = backward
    return out


def loss_rec(pred_probs, gt_grid: np.ndarray, w_occ: float | None = None) -> Tensor:
    """Occupancy-balanced binary cross-entropy between predicted cell
    probabilities and a boolean ground-truth grid."""
    pred = as_tensor(pred_probs)
    gt = np.asarray(gt_grid).astype(bool)
    if pred.data.shape != gt.shape:
        raise ValueError(f"loss_rec: prediction {pred.data.shape} vs grid {gt.shape}")
    if w_occ is None:
        w_occ = default_w_occ(gt)
    return _balanced_bce(pred, gt, w_occ)


def loss_track(pred_probs, labels: np.ndarray, w_act: float | None = None) -> Tensor:
    """Imbalance-weighted binary cross-entropy over edge activation labels."""
    pred = as_tensor(pred_probs)
    labels = np.asarray(labels)
    if pred.data.shape != labels.shape:
        raise ValueError(f"loss_track: {pred.data.shape} predictions vs {labels.shape} labels")
    if w_act is None:
        w_act = default_w_act(labels)
    return _balanced_bce(pred, labels.astype(bool), w_act)
