"""Closed-loop 3D multi-object tracking toolkit.

A numpy/scipy library covering the full loop: a deterministic indoor scene
simulator that produces ground truth and synthetic detections, differentiable
7-DoF pose estimation from normalized-object-coordinate correspondences, a
message-passing graph tracker trained with balanced losses, and a CLEAR-style
evaluation harness.
"""

from .errors import (
    DegenerateGeometryError,
    PoseFailureError,
    TrackingError,
    UndefinedMetricError,
)
from .geometry import (
    Box2,
    Box3,
    CameraModel,
    EulerPose,
    Pose7,
    apply_pose,
    backproject,
    backproject_patch,
    euler_to_matrix,
    iou2d,
    iou3d_boxes,
    iou3d_grids,
    matrix_to_euler,
    project,
    wrap_angle,
)
from .pose import (
    Correspondences,
    OutlierParams,
    estimate_pose,
    ransac_alignment_filter,
    statistical_outlier_filter,
    umeyama_fit,
    umeyama_residual,
    umeyama_residual_grad,
)
from .autodiff import Tensor
from .losses import LossWeights, default_w_act, default_w_occ, loss_noc, loss_rec, loss_track
from .networks import (
    EdgeFeature,
    GnnConfig,
    TrackerNetwork,
    TrainingSchedule,
    edge_feature,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .association import (
    DetectionRecord,
    TrackGraph,
    Tracklet,
    assemble_tracklets,
    build_graph,
    filter_detections,
    heuristic_tracker,
    label_graph,
)
from .simulator import (
    NoiseModel,
    ObjectSpec,
    SceneConfig,
    SceneSequence,
    generate_sequence,
    interest_score,
    repulsion_weight,
    sample_scene_config,
    smooth_trajectory,
    synthesize_detections,
)
from .evaluation import (
    TrackReport,
    evaluate_tracking,
    grid_iou_report,
    match_frame,
    mota,
    prf,
    tracklets_to_frames,
)

__version__ = "0.1.0"
