"""Learned tracking components: edge encoder, voxel encoder, message
passing, edge classifier, and a deterministic Adam training loop.

Layer widths default to desk-scale values so a full training run finishes in
minutes on one CPU core; all of them are configurable through
:class:`GnnConfig`.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import matrix_to_euler, wrap_angle, Pose7
from .losses import loss_noc, loss_rec, loss_track, default_w_act

EDGE_FEATURE_DIM = 8

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EdgeFeature:
    """Relative pose feature between two detections in different frames."""

    rel_translation: np.ndarray
    rel_euler: np.ndarray
    log_scale_ratio: float
    rel_time: int

    def __post_init__(self):
        rt = np.asarray(self.rel_translation, dtype=np.float64)
        re = np.asarray(self.rel_euler, dtype=np.float64)
        if rt.shape != (3,) or re.shape != (3,):
            raise ValueError("relative translation and euler must be 3-vectors")
        if np.any(re <= -np.pi) or np.any(re > np.pi):
            raise ValueError("relative euler components must lie in (-pi, pi]")
        if self.rel_time == 0:
            raise ValueError("edges connect detections in distinct frames")
        object.__setattr__(self, "rel_translation", rt)
        object.__setattr__(self, "rel_euler", re)
        object.__setattr__(self, "log_scale_ratio", float(self.log_scale_ratio))
        object.__setattr__(self, "rel_time", int(self.rel_time))

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [
                self.rel_translation,
                self.rel_euler,
                [self.log_scale_ratio, float(self.rel_time)],
            ]
        )


def edge_feature(pose_i: Pose7, frame_i: int, pose_j: Pose7, frame_j: int) -> EdgeFeature:
    """Feature of the edge from detection i to the later detection j."""
    e_i = matrix_to_euler(pose_i.rotation)
    e_j = matrix_to_euler(pose_j.rotation)
    return EdgeFeature(
        pose_j.translation - pose_i.translation,
        wrap_angle(e_j - e_i),
        float(np.log(pose_j.scale / pose_i.scale)),
        frame_j - frame_i,
    )


@dataclass(frozen=True)
class GnnConfig:
    """Architecture and windowing knobs for the tracking network."""

    node_dim: int = 16
    edge_dim: int = 12
    message_passing_steps: int = 4
    window: int = 5
    edge_encoder_hidden: int = 32
    edge_update_hidden: int = 64
    node_update_hidden: int = 64
    classifier_hidden: int = 16
    leaky_slope: float = 0.01
    use_geometry: bool = True
    voxel_channels: tuple = (4, 8)
    voxel_kernels: tuple = (4, 2)
    voxel_strides: tuple = (4, 2)
    voxel_fc_hidden: int = 32
    grid_resolution: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.message_passing_steps < 1:
            raise ValueError("message_passing_steps must be >= 1")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if len(self.voxel_channels) != len(self.voxel_kernels) or len(self.voxel_kernels) != len(
            self.voxel_strides
        ):
            raise ValueError("voxel conv channel/kernel/stride lists must align")
        object.__setattr__(self, "voxel_channels", tuple(self.voxel_channels))
        object.__setattr__(self, "voxel_kernels", tuple(self.voxel_kernels))
        object.__setattr__(self, "voxel_strides", tuple(self.voxel_strides))

    def voxel_flat_dim(self) -> int:
        size = self.grid_resolution
        for k, s in zip(self.voxel_kernels, self.voxel_strides):
            size = (size - k) // s + 1
            if size < 1:
                raise ValueError("voxel conv stack consumes the grid entirely")
        return self.voxel_channels[-1] * size**3


_HIDDEN_GAIN = math.sqrt(6.0)  # He-uniform: keeps variance through leaky ReLU
_LINEAR_GAIN = math.sqrt(3.0)  # variance-preserving for a purely linear layer


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, gain: float) -> Tensor:
    """Seeded uniform init in +-gain/sqrt(fan_in).

    A plain +-1/sqrt(fan_in) bound shrinks signal variance roughly 18x per
    two-layer MLP; stacked across the encoder, four message rounds and the
    classifier, edge-dependent signal collapses to a constant and training
    stalls at the constant-output optimum of the weighted cross-entropy.
    """
    bound = gain / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


class TrackerNetwork:
    """The full learned stack from detection features to edge probabilities."""

    def __init__(self, config: GnnConfig = GnnConfig(), params: dict | None = None):
        self.config = config
        self.params: dict[str, Tensor] = params if params is not None else self._init_params()

    def _init_params(self) -> dict[str, Tensor]:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        p: dict[str, Tensor] = {}

        def mlp(prefix, d_in, d_hidden, d_out):
            p[f"{prefix}.w0"] = _uniform_init(rng, (d_in, d_hidden), d_in, _HIDDEN_GAIN)
            p[f"{prefix}.b0"] = _uniform_init(rng, (d_hidden,), d_in, 1.0)
            p[f"{prefix}.w1"] = _uniform_init(rng, (d_hidden, d_out), d_hidden, _LINEAR_GAIN)
            p[f"{prefix}.b1"] = _uniform_init(rng, (d_out,), d_hidden, 1.0)

        mlp("edge_enc", EDGE_FEATURE_DIM, cfg.edge_encoder_hidden, cfg.edge_dim)
        cin = 1
        for i, (cout, k, s) in enumerate(
            zip(cfg.voxel_channels, cfg.voxel_kernels, cfg.voxel_strides)
        ):
            fan = cin * k**3
            p[f"vox.conv{i}.k"] = _uniform_init(rng, (cout, cin, k, k, k), fan, _HIDDEN_GAIN)
            p[f"vox.conv{i}.b"] = _uniform_init(rng, (cout,), fan, 1.0)
            cin = cout
        flat = cfg.voxel_flat_dim()
        mlp("vox.fc", flat, cfg.voxel_fc_hidden, cfg.node_dim)
        mlp("edge_upd", cfg.edge_dim + 2 * cfg.node_dim, cfg.edge_update_hidden, cfg.edge_dim)
        mlp("node_upd", cfg.edge_dim + cfg.node_dim, cfg.node_update_hidden, cfg.node_dim)
        mlp("cls", cfg.edge_dim, cfg.classifier_hidden, 1)
        return p

    def _mlp(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        h = ad.leaky_relu(ad.affine(x, p[f"{prefix}.w0"], p[f"{prefix}.b0"]), self.config.leaky_slope)
        return ad.affine(h, p[f"{prefix}.w1"], p[f"{prefix}.b1"])

    def encode_edges(self, features) -> Tensor:
        """Initial edge embeddings from (E, 8) relative-pose features."""
        feats = features if isinstance(features, Tensor) else Tensor(np.atleast_2d(features))
        if feats.data.shape[1] != EDGE_FEATURE_DIM:
            raise ValueError(f"edge features must have {EDGE_FEATURE_DIM} columns")
        if not np.all(np.isfinite(feats.data)):
            raise ValueError("edge features must be finite")
        return self._mlp("edge_enc", feats)

    def encode_voxels(self, grids) -> Tensor:
        """Shape embeddings from a batch of occupancy grids.

        Accepts one (R, R, R) grid or a stack (N, R, R, R); occupancy enters
        the convolution stack as a {0, 1} single-channel volume.
        """
        g = np.asarray(grids, dtype=np.float64)
        if g.ndim == 3:
            g = g[None]
        r = self.config.grid_resolution
        if g.ndim != 4 or g.shape[1:] != (r, r, r):
            raise ValueError(f"expected ({r}, {r}, {r}) occupancy grids, got {g.shape}")
        x = Tensor(g[:, None, :, :, :])
        p = self.params
        for i, s in enumerate(self.config.voxel_strides):
            x = ad.conv3d(x, p[f"vox.conv{i}.k"], p[f"vox.conv{i}.b"], stride=s)
            x = ad.leaky_relu(x, self.config.leaky_slope)
        n = x.data.shape[0]
        flat = Tensor(x.data.reshape(n, -1), parents=(x,))
        shape = x.data.shape

        def backward(grad):
            ad._accumulate(x, grad.reshape(shape))

        flat._backward_fn = backward
        return self._mlp("vox.fc", flat)

    def node_embeddings(self, grids) -> Tensor:
        """Voxel embeddings, or zeros under the no-geometry ablation."""
        if not self.config.use_geometry:
            n = len(grids)
            return Tensor(np.zeros((n, self.config.node_dim)))
        return self.encode_voxels(grids)

    def message_passing(self, edges: np.ndarray, node_emb: Tensor, edge_emb: Tensor) -> Tensor:
        """Alternating edge/node updates; returns the final edge embeddings.

        Each round first updates every edge from its two endpoint embeddings
        and its own previous embedding, then updates every node from the mean
        of its incident (fresh) edge embeddings and its previous embedding.
        Isolated nodes receive a zero message.
        """
        edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
        n_nodes = node_emb.data.shape[0]
        segments = [[] for _ in range(n_nodes)]
        for e, (i, j) in enumerate(edges):
            segments[i].append(e)
            segments[j].append(e)
        segments = [np.asarray(s, dtype=np.intp) for s in segments]
        for _ in range(self.config.message_passing_steps):
            src = ad.take_rows(node_emb, edges[:, 0])
            dst = ad.take_rows(node_emb, edges[:, 1])
            edge_emb = self._mlp("edge_upd", ad.concat([edge_emb, src, dst], axis=1))
            msg = ad.mean_aggregate(edge_emb, segments)
            node_emb = self._mlp("node_upd", ad.concat([msg, node_emb], axis=1))
        return edge_emb

    def classify_edges(self, edge_emb) -> Tensor:
        """Per-edge activation probability, strictly inside (0, 1)."""
        emb = edge_emb if isinstance(edge_emb, Tensor) else Tensor(np.atleast_2d(edge_emb))
        logits = self._mlp("cls", emb)
        flat = Tensor(logits.data[:, 0], parents=(logits,))

        def backward(g):
            ad._accumulate(logits, g[:, None])

        flat._backward_fn = backward
        probs = ad.sigmoid(flat)
        return ad.clip(probs, 1e-12, 1.0 - 1e-12)

    def forward(self, graph, node_cache: np.ndarray | None = None) -> Tensor:
        """Edge probabilities for a track graph (see association.TrackGraph).

        ``node_cache`` short-circuits the voxel encoder with precomputed
        embeddings (used while the geometry features are frozen).
        """
        if graph.num_edges == 0:
            return Tensor(np.zeros(0))
        if node_cache is not None:
            nodes = Tensor(node_cache)
        else:
            grids = np.stack([d.grid for d in graph.detections]).astype(np.float64)
            nodes = self.node_embeddings(grids)
        edges0 = self.encode_edges(Tensor(graph.edge_features))
        final = self.message_passing(graph.edges, nodes, edges0)
        return self.classify_edges(final)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None


def encode_edge(feature: EdgeFeature, net: TrackerNetwork) -> np.ndarray:
    """12-dim embedding of one edge feature."""
    return net.encode_edges(feature.as_array()[None, :]).data[0]


def encode_voxels(grid: np.ndarray, net: TrackerNetwork) -> np.ndarray:
    """16-dim embedding of one occupancy grid."""
    return net.encode_voxels(grid).data[0]


def message_passing(graph, net: TrackerNetwork) -> np.ndarray:
    """Final edge embeddings of a graph under the network's parameters."""
    grids = np.stack([d.grid for d in graph.detections]).astype(np.float64)
    nodes = net.node_embeddings(grids)
    edges0 = net.encode_edges(Tensor(graph.edge_features))
    return net.message_passing(graph.edges, nodes, edges0).data


def classify_edges(edge_embeddings, net: TrackerNetwork) -> np.ndarray:
    return net.classify_edges(edge_embeddings).data


@dataclass(frozen=True)
class TrainingSchedule:
    """Two-stage schedule: tracking-only pretraining with frozen geometry
    features, then joint fine-tuning with the correspondence and
    reconstruction terms enabled.

    ``max_grad_norm`` clips the global gradient norm per step; the clamped
    cross-entropy produces near-singular gradients when predictions touch
    the probability clamp, and unclipped steps can overshoot into the
    zero-gradient region and stall there.
    """

    pretrain_epochs: int = 40
    joint_epochs: int = 20
    learning_rate: float = 1e-3
    l2: float = 1e-3
    noc_weight: float = 3.0
    rec_weight: float = 0.75
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float | None = 1.0


class AdamState:
    """First/second moment buffers keyed like the parameter dict."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0


def adam_update(
    params: dict[str, Tensor],
    state: AdamState,
    schedule: TrainingSchedule,
    frozen_prefixes: tuple = (),
) -> None:
    """One Adam step over parameters that received gradients.

    The global gradient norm is clipped to ``max_grad_norm`` first, then L2
    regularization is added. Parameters whose name starts with a frozen
    prefix, and parameters without gradients, are left untouched.
    """
    state.step += 1
    t = state.step
    lr = schedule.learning_rate
    active = [
        name
        for name in sorted(params)
        if params[name].grad is not None
        and not any(name.startswith(f) for f in frozen_prefixes)
    ]
    clip_scale = 1.0
    if schedule.max_grad_norm is not None:
        total = math.sqrt(sum(float((params[n].grad ** 2).sum()) for n in active))
        if total > schedule.max_grad_norm:
            clip_scale = schedule.max_grad_norm / total
    for name in active:
        p = params[name]
        g = clip_scale * p.grad + schedule.l2 * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = schedule.beta1 * state.m[name] + (1 - schedule.beta1) * g
        v = state.v[name] = schedule.beta2 * state.v[name] + (1 - schedule.beta2) * g * g
        m_hat = m / (1 - schedule.beta1**t)
        v_hat = v / (1 - schedule.beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + schedule.eps)


def object_loss_terms(graph) -> tuple[float, float]:
    """Mean correspondence and reconstruction losses of a graph's detections.

    The detection backbone is external to this artifact, so both terms are
    data constants here; they are reported alongside the tracking loss, whose
    gradient also reaches the voxel encoder during joint training.
    """
    noc_val = 0.0
    rec_val = 0.0
    n = 0
    for det in graph.detections:
        if det.gt_instance is None:
            continue
        if det.gt_noc is not None:
            noc_val += loss_noc(det.correspondences.noc, det.gt_noc, det.class_name).item()
        gt_grid = (graph.gt_grids or {}).get(det.gt_instance)
        if gt_grid is not None:
            pred = np.clip(det.grid.astype(np.float64), 1e-4, 1.0 - 1e-4)
            rec_val += loss_rec(pred, gt_grid).item()
        n += 1
    if n:
        noc_val /= n
        rec_val /= n
    return noc_val, rec_val


def train(
    graphs,
    net: TrackerNetwork | None = None,
    schedule: TrainingSchedule = TrainingSchedule(),
    config: GnnConfig | None = None,
    adam: AdamState | None = None,
    start_epoch: int = 0,
) -> tuple[TrackerNetwork, list[dict]]:
    """Train the tracker on labeled graphs; deterministic for a fixed seed.

    Graphs are visited in list order, one Adam step per graph. The first
    ``pretrain_epochs`` epochs freeze the voxel encoder and optimize the
    tracking loss alone; the remaining ``joint_epochs`` update everything
    with the correspondence/reconstruction terms enabled. Returns the
    trained network and one history row per epoch.
    """
    graphs = [g for g in graphs if g.num_edges > 0]
    if not graphs:
        raise ValueError("training requires at least one labeled graph with edges")
    for g in graphs:
        if g.labels is None:
            raise ValueError("every training graph needs edge labels")
    if net is None:
        net = TrackerNetwork(config or GnnConfig())
    if adam is None:
        adam = AdamState()
    history: list[dict] = []
    total_epochs = schedule.pretrain_epochs + schedule.joint_epochs
    node_caches: list[np.ndarray | None] = [None] * len(graphs)
    if start_epoch < schedule.pretrain_epochs:
        # geometry features are frozen during pretraining: encode once
        for i, graph in enumerate(graphs):
            grids = np.stack([d.grid for d in graph.detections]).astype(np.float64)
            node_caches[i] = net.node_embeddings(grids).data
    object_terms = [None] * len(graphs)  # (noc, rec), data constants per graph
    for epoch in range(start_epoch, total_epochs):
        joint = epoch >= schedule.pretrain_epochs
        frozen = () if joint else ("vox.",)
        sums = np.zeros(4)
        for i, graph in enumerate(graphs):
            net.zero_grad()
            probs = net.forward(graph, node_cache=None if joint else node_caches[i])
            track = loss_track(probs, graph.labels, default_w_act(graph.labels))
            track.backward()
            adam_update(net.params, adam, schedule, frozen_prefixes=frozen)
            track_v = track.item()
            noc_v = rec_v = 0.0
            if joint:
                if object_terms[i] is None:
                    object_terms[i] = object_loss_terms(graph)
                noc_v, rec_v = object_terms[i]
            total = track_v + schedule.noc_weight * noc_v + schedule.rec_weight * rec_v
            sums += (total, track_v, noc_v, rec_v)
        sums /= len(graphs)
        history.append(
            {
                "epoch": epoch,
                "stage": "joint" if joint else "pretrain",
                "loss": float(sums[0]),
                "track_loss": float(sums[1]),
                "noc_loss": float(sums[2]),
                "rec_loss": float(sums[3]),
            }
        )
    return net, history


def _encode_array(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    a = np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").astype(np.float64)
    return a.reshape(d["shape"])


def _config_to_dict(cfg: GnnConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _config_from_dict(d: dict) -> GnnConfig:
    kw = dict(d)
    for key in ("voxel_channels", "voxel_kernels", "voxel_strides"):
        if key in kw:
            kw[key] = tuple(kw[key])
    return GnnConfig(**kw)


def save_checkpoint(
    path,
    net: TrackerNetwork,
    adam: AdamState | None = None,
    epoch: int = 0,
    extra: dict | None = None,
) -> None:
    """Write a versioned JSON checkpoint (little-endian float64, layer-name keyed)."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": _config_to_dict(net.config),
        "epoch": epoch,
        "params": {k: _encode_array(v.data) for k, v in net.params.items()},
    }
    if adam is not None:
        doc["adam"] = {
            "step": adam.step,
            "m": {k: _encode_array(v) for k, v in adam.m.items()},
            "v": {k: _encode_array(v) for k, v in adam.v.items()},
        }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path) -> tuple[TrackerNetwork, AdamState | None, int]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
    config = _config_from_dict(doc["config"])
    params = {
        k: Tensor(_decode_array(v), requires_grad=True) for k, v in doc["params"].items()
    }
    net = TrackerNetwork(config, params)
    adam = None
    if "adam" in doc:
        adam = AdamState()
        adam.step = int(doc["adam"]["step"])
        adam.m = {k: _decode_array(v) for k, v in doc["adam"]["m"].items()}
        adam.v = {k: _decode_array(v) for k, v in doc["adam"]["v"].items()}
    return net, adam, int(doc.get("epoch", 0))
