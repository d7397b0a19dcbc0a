"""Multimodal 3D panoptic segmentation with mean-teacher domain adaptation.

The package covers the full loop on synthetic scenes: data generation with a
controllable domain shift, geometric and visual superpoints, confidence-based
pseudo-label refinement, modality dropout for the student, and a panoptic
quality evaluator.
"""

from .core import (
    Calibration,
    CameraImage,
    ClassRegistry,
    ClassSpec,
    CylindricalVoxelGrid,
    Frame,
    PanopticLabeling,
    PointCloud,
    build_cylindrical_grid,
    decode_panoptic,
    encode_panoptic,
    mask_iou,
    project_points,
)
from .edges import canny_edges
from .synth import (
    SceneConfig,
    ShiftParams,
    apply_domain_shift,
    generate_scene,
    make_oracle_proposals,
)
from .modaldrop import DropRatios, DropReport, apply_modal_dropout, prepare_drop_regions
from .superpoints import (
    DensityClusterer,
    GeometricSuperpoints,
    GroundPlaneSegmenter,
    VisualSuperpoints,
    extract_geometric_superpoints,
    lift_visual_masks,
    neighbor_counts,
    radius_neighbors,
)
from .pseudolabel import PredictionSet, PseudoLabelRefiner, PseudoLabelSet
from .metrics import (
    PanopticEvaluator,
    PanopticReport,
    match_segments,
    mean_iou,
    panoptic_quality,
    semantic_confusion,
)
from .model import (
    ModelShape,
    ema_update,
    extract_features,
    forward,
    init_parameters,
    supervised_pixels,
)
from .trainer import DomainAdapter, derive_instances, learning_rate, prediction_to_ids
from .config import RunConfig, dump_config, parse_config, read_config

__version__ = "0.1.0"

__all__ = [
    "Calibration",
    "CameraImage",
    "ClassRegistry",
    "ClassSpec",
    "CylindricalVoxelGrid",
    "DensityClusterer",
    "DomainAdapter",
    "DropRatios",
    "DropReport",
    "Frame",
    "GeometricSuperpoints",
    "GroundPlaneSegmenter",
    "ModelShape",
    "PanopticEvaluator",
    "PanopticLabeling",
    "PanopticReport",
    "PointCloud",
    "PredictionSet",
    "PseudoLabelRefiner",
    "PseudoLabelSet",
    "RunConfig",
    "SceneConfig",
    "ShiftParams",
    "VisualSuperpoints",
    "apply_domain_shift",
    "apply_modal_dropout",
    "build_cylindrical_grid",
    "canny_edges",
    "decode_panoptic",
    "derive_instances",
    "dump_config",
    "ema_update",
    "encode_panoptic",
    "extract_features",
    "extract_geometric_superpoints",
    "forward",
    "generate_scene",
    "init_parameters",
    "learning_rate",
    "lift_visual_masks",
    "make_oracle_proposals",
    "mask_iou",
    "match_segments",
    "mean_iou",
    "neighbor_counts",
    "panoptic_quality",
    "parse_config",
    "prediction_to_ids",
    "prepare_drop_regions",
    "project_points",
    "radius_neighbors",
    "read_config",
    "semantic_confusion",
    "supervised_pixels",
]
