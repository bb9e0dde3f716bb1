"""Fusion of instance masks with semantic logits over sliding windows of
equirectangular panoramas, boundary refinement, distillation-loss
diagnostics and mIoU evaluation."""

__version__ = "0.1.0"

from .boundary import (
    RefineConfig,
    boundaries_from_labels,
    boundaries_from_masks,
    boundary_loss_student,
    boundary_loss_ta,
    refine_boundary,
)
from .errors import (
    ConfigError,
    ConsistencyError,
    DegenerateInputError,
    FormatError,
    GeometryError,
    InvalidInputError,
    PanoDarError,
)
from .fusion import FusedWindow, FusionConfig, InstanceMaskSet, assign_mask_label, fuse_window
from .grid import ClassCatalog, argmax_map, shannon_entropy, softmax_pixel, top2_gap
from .losses import LossReport, consistency_mse, cross_entropy, student_total, ta_total
from .metrics import ConfusionMatrix, accumulate, iou_per_class, mean_iou
from .windows import WindowPlan, extract, plan_nonoverlapping, plan_overlapping, stitch

__all__ = [
    "RefineConfig", "boundaries_from_labels", "boundaries_from_masks", "boundary_loss_student",
    "boundary_loss_ta", "refine_boundary",
    "ConfigError", "ConsistencyError", "DegenerateInputError", "FormatError", "GeometryError",
    "InvalidInputError", "PanoDarError",
    "FusedWindow", "FusionConfig", "InstanceMaskSet", "assign_mask_label", "fuse_window",
    "ClassCatalog", "argmax_map", "shannon_entropy", "softmax_pixel", "top2_gap",
    "LossReport", "consistency_mse", "cross_entropy", "student_total", "ta_total",
    "ConfusionMatrix", "accumulate", "iou_per_class", "mean_iou",
    "WindowPlan", "extract", "plan_nonoverlapping", "plan_overlapping", "stitch",
]
