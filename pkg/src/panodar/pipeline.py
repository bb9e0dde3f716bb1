"""End-to-end composition: plan, fuse, refine, losses, stitch, evaluate."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .boundary import (
    RefineConfig,
    boundaries_from_labels,
    boundaries_from_masks,
    boundary_loss_student,
    boundary_loss_ta,
    refine_boundary_detailed,
)
from .config import PipelineConfig
from .errors import GeometryError, InvalidInputError, PanoDarError
from .fusion import FusedWindow, fuse_window
from .grid import argmax_map, logsumexp_map
from .io import dumps_json, encode_npy, file_digest, label_array, masks_to_dict, read_json, read_masks, read_tensor
from .losses import LossReport, consistency_mse, pixel_cross_entropy, weighted_sum
from .metrics import ConfusionMatrix, evaluate, iou_per_class, mean_iou
from .synth import SceneSpec, SyntheticScene
from .windows import OverlapRegion, WindowPlan, extract, plan_nonoverlapping, plan_overlapping, stitch

log = logging.getLogger(__name__)

SCENE_FILES = {
    "gt_labels": "gt_labels.npy",
    "ta_logits": "ta_logits.npy",
    "student_logits": "student_logits.npy",
    "masks": "masks.json",
    "sam_boundaries": "sam_boundaries.npy",
}


class StageError(PanoDarError):
    """Wraps an error with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    """Ordered map; results never depend on ``threads``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _sum(values: Iterable[float]) -> float:
    total = 0.0
    for v in values:
        total += v
    return total


@dataclass(eq=False)
class OverlapResult:
    overlap: OverlapRegion
    b_ta_i: np.ndarray
    b_ta_j: np.ndarray
    b_sam: np.ndarray
    b_ref: np.ndarray
    agreed: int
    relocated: int
    retained: int
    l_cc: float
    l_bd_t_ta: float | None
    l_bd_t_s: float | None

    def to_dict(self) -> dict:
        return {
            "left_window": self.overlap.left_window,
            "right_window": self.overlap.right_window,
            "x_start": self.overlap.x_start,
            "width": self.overlap.width,
            "c_o": int(self.b_ref.sum()),
            "agreed": self.agreed,
            "relocated": self.relocated,
            "retained": self.retained,
            "l_cc": self.l_cc,
            "l_bd_t_ta": self.l_bd_t_ta,
            "l_bd_t_s": self.l_bd_t_s,
        }


def overlap_stage(plan: WindowPlan, k: int, ta_windows: Sequence[np.ndarray], student: np.ndarray,
                  b_sam: np.ndarray, refine_cfg: RefineConfig, mse_reduction: str = "mean") -> OverlapResult:
    """Consistency, boundary refinement and boundary losses for overlap ``k``.

    A refined map with no boundary pixels makes both boundary losses
    undefined; they are reported as ``None`` and contribute nothing.
    """
    o = plan.overlaps[k]
    left, right = plan.windows[o.left_window], plan.windows[o.right_window]
    crop_i = ta_windows[o.left_window][:, :, o.columns_in(left)]
    crop_j = ta_windows[o.right_window][:, :, o.columns_in(right)]
    if b_sam.shape != crop_i.shape[1:]:
        raise InvalidInputError(f"SAM boundary map for overlap {k} is {b_sam.shape}, expected {crop_i.shape[1:]}")
    l_cc = consistency_mse(crop_i, crop_j, mse_reduction)
    b_ta_i = boundaries_from_labels(argmax_map(crop_i))
    b_ta_j = boundaries_from_labels(argmax_map(crop_j))
    res = refine_boundary_detailed(b_ta_i, b_ta_j, b_sam, crop_i, crop_j, refine_cfg)
    b_s = boundaries_from_labels(argmax_map(student[:, :, o.x_start:o.x_end]))
    if res.refined.any():
        l_bd_ta = boundary_loss_ta(res.refined, b_ta_i, b_ta_j)
        l_bd_s = boundary_loss_student(res.refined, b_s)
    else:
        l_bd_ta = l_bd_s = None
    return OverlapResult(o, b_ta_i, b_ta_j, b_sam, res.refined, res.agreed, res.relocated,
                         res.retained, l_cc, l_bd_ta, l_bd_s)


@dataclass(eq=False)
class LossBreakdown:
    report: LossReport
    overlaps: list[OverlapResult]
    window_ce_student: list[float]
    window_ce_ta: list[float]


def compute_losses(plan: WindowPlan, ta_windows: Sequence[np.ndarray], student: np.ndarray,
                   ensemble_labels: Sequence[np.ndarray], weights: Sequence[np.ndarray],
                   sam_overlaps: Sequence[np.ndarray], cfg: PipelineConfig,
                   ta_whole: np.ndarray | None = None, threads: int = 1) -> LossBreakdown:
    """Evaluate every loss term over one panorama.

    Window terms are per-window sums added over windows; overlap terms are
    added over overlaps. ``ta_whole`` defaults to the concatenation of the
    TA windows (later window wins on shared columns).
    """
    n = len(plan.windows)
    for name, seq in (("ta_windows", ta_windows), ("ensemble_labels", ensemble_labels), ("weights", weights)):
        if len(seq) != n:
            raise InvalidInputError(f"{name}: expected {n} windows, got {len(seq)}")
    if len(sam_overlaps) != len(plan.overlaps):
        raise InvalidInputError(f"expected {len(plan.overlaps)} SAM overlap maps, got {len(sam_overlaps)}")
    if student.shape[1:] != (plan.canvas_height, plan.canvas_width):
        raise InvalidInputError(f"student logits cover {student.shape[1:]}, canvas is "
                                f"{(plan.canvas_height, plan.canvas_width)}")
    if ta_whole is None:
        ta_whole = stitch(plan, ta_windows, "concat")
    if ta_whole.shape != student.shape:
        raise InvalidInputError(f"whole-image TA map {ta_whole.shape} differs from student {student.shape}")

    # the student's log-sum-exp is shared by the whole-image and window terms
    lse_student = logsumexp_map(student)
    l_ce_ta_s = weighted_sum(pixel_cross_entropy(student, argmax_map(ta_whole), lse_student),
                             reduction=cfg.ce_reduction)

    def window_terms(i: int) -> tuple[float, float]:
        w = plan.windows[i]
        ce_s = pixel_cross_entropy(extract(student, w), ensemble_labels[i], lse_student[:, w.columns])
        ce_ta = pixel_cross_entropy(ta_windows[i], ensemble_labels[i])
        return (weighted_sum(ce_s, weights[i], cfg.lam, cfg.ce_reduction),
                weighted_sum(ce_ta, weights[i], cfg.lam, cfg.ce_reduction))

    per_window = _map(window_terms, list(range(n)), threads)
    overlaps = _map(
        lambda k: overlap_stage(plan, k, ta_windows, student, sam_overlaps[k], cfg.refine, cfg.mse_reduction),
        list(range(len(plan.overlaps))), threads,
    )
    report = LossReport(
        l_cc=_sum(o.l_cc for o in overlaps),
        l_ce_ta_s=l_ce_ta_s,
        l_ce_t_s=_sum(s for s, _ in per_window),
        l_ce_t_ta=_sum(t for _, t in per_window),
        l_bd_t_ta=_sum(o.l_bd_t_ta for o in overlaps if o.l_bd_t_ta is not None),
        l_bd_t_s=_sum(o.l_bd_t_s for o in overlaps if o.l_bd_t_s is not None),
        lam=cfg.lam,
    )
    return LossBreakdown(report, overlaps, [s for s, _ in per_window], [t for _, t in per_window])


def metrics_report(gt: np.ndarray, pred: np.ndarray, class_names: Sequence[str]) -> dict:
    cm = evaluate(gt, pred, len(class_names))
    return metrics_from_matrix(cm, class_names)


def metrics_from_matrix(cm: ConfusionMatrix, class_names: Sequence[str]) -> dict:
    ious = iou_per_class(cm)
    return {
        "per_class": [{"name": n, "iou": v} for n, v in zip(class_names, ious)],
        "miou": mean_iou(cm),
        "pixel_count": cm.total,
    }


# --- scenes on disk -----------------------------------------------------------

def scene_files(scene: SyntheticScene) -> dict[str, bytes]:
    return {
        "spec.json": dumps_json(scene.spec.to_dict()).encode(),
        SCENE_FILES["gt_labels"]: encode_npy(label_array(scene.gt_labels)),
        SCENE_FILES["ta_logits"]: encode_npy(scene.ta_logits),
        SCENE_FILES["student_logits"]: encode_npy(scene.student_logits),
        SCENE_FILES["masks"]: dumps_json(masks_to_dict(scene.masks)).encode(),
        SCENE_FILES["sam_boundaries"]: encode_npy(label_array(scene.sam_boundaries)),
    }


def load_scene(path) -> SyntheticScene:
    """Load a scene directory. ``spec.json`` and ``sam_boundaries.npy`` are
    optional; the rest are required."""
    path = Path(path)
    gt = read_tensor(path / SCENE_FILES["gt_labels"], "labels")
    ta = read_tensor(path / SCENE_FILES["ta_logits"], "logits")
    student = read_tensor(path / SCENE_FILES["student_logits"], "logits")
    masks = read_masks(path / SCENE_FILES["masks"])
    h, w = gt.shape
    c = ta.shape[0]
    if ta.shape[1:] != (h, w) or student.shape != ta.shape:
        raise InvalidInputError(
            f"scene arrays disagree: gt {gt.shape}, ta {ta.shape}, student {student.shape}"
        )
    if (masks.height, masks.width) != (h, w):
        raise InvalidInputError(f"masks are {masks.height}x{masks.width}, gt is {h}x{w}")
    sam_path = path / SCENE_FILES["sam_boundaries"]
    sam = read_tensor(sam_path, "labels").astype(bool) if sam_path.exists() else boundaries_from_masks(masks)
    spec_path = path / "spec.json"
    spec = SceneSpec.from_dict(read_json(spec_path)) if spec_path.exists() else \
        SceneSpec(width=w, height=h, classes=c, region_count=1)
    return SyntheticScene(spec, gt, ta, student, masks, sam)


# --- the composite run -----------------------------------------------------------

@dataclass(eq=False)
class PipelineResult:
    plan: WindowPlan
    fused: list[FusedWindow]
    losses: LossBreakdown
    ensemble_labels: np.ndarray
    ta_labels: np.ndarray
    metrics_ta: dict
    metrics_ensemble: dict
    timings: dict = field(default_factory=dict)

    @property
    def miou_ta(self) -> float:
        return self.metrics_ta["miou"]

    @property
    def miou_ensemble(self) -> float:
        return self.metrics_ensemble["miou"]


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    log.info("stage %s: start", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - t0
    log.info("stage %s: done in %.3fs", name, timings[name])


def run_pipeline(scene: SyntheticScene, cfg: PipelineConfig = PipelineConfig(), threads: int = 1) -> PipelineResult:
    timings: dict = {}
    h, w = scene.gt_labels.shape
    c = scene.ta_logits.shape[0]

    with _stage("plan", timings):
        if cfg.window_height != h:
            raise GeometryError(f"window height {cfg.window_height} differs from canvas height {h}")
        if len(cfg.classes) != c:
            raise InvalidInputError(f"config lists {len(cfg.classes)} classes but logits have {c}")
        plan = plan_overlapping(w, h, cfg.window_width, cfg.stride)
        tiles = plan_nonoverlapping(w, h, cfg.window_width)

    with _stage("fuse", timings):
        ta_windows = [extract(scene.ta_logits, win) for win in plan.windows]

        def fuse_one(i: int) -> FusedWindow:
            win = plan.windows[i]
            return fuse_window(scene.masks.crop(win.x_start, win.width), ta_windows[i], cfg.fusion)

        fused = _map(fuse_one, list(range(len(plan.windows))), threads)

    with _stage("refine", timings):
        sam_overlaps = [boundaries_from_masks(scene.masks.crop(o.x_start, o.width)) for o in plan.overlaps]

    with _stage("losses", timings):
        ta_whole = stitch(tiles, [extract(scene.ta_logits, t) for t in tiles.windows], "concat")
        losses = compute_losses(
            plan, ta_windows, scene.student_logits,
            [f.ensemble_labels for f in fused], [f.weight_map for f in fused],
            sam_overlaps, cfg, ta_whole=ta_whole, threads=threads,
        )

    with _stage("stitch", timings):
        ensemble = stitch(plan, [f.ensemble_labels for f in fused], "concat")
        ta_labels = argmax_map(ta_whole)

    with _stage("evaluate", timings):
        m_ta = metrics_report(scene.gt_labels, ta_labels, cfg.classes)
        m_ens = metrics_report(scene.gt_labels, ensemble, cfg.classes)

    return PipelineResult(plan, fused, losses, ensemble, ta_labels, m_ta, m_ens, timings)


def build_manifest(result: PipelineResult, cfg: PipelineConfig, digests: dict[str, str],
                   threads: int) -> dict:
    return {
        "tool": "panodar",
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": cfg.to_dict(),
        "threads": threads,
        "inputs": digests,
        "plan": result.plan.to_dict(),
        "windows": [
            {
                "index": win.index,
                "x_start": win.x_start,
                "ce_student": ce_s,
                "ce_ta": ce_t,
                "masks": [r.to_dict() for r in fw.per_mask_report],
            }
            for win, fw, ce_s, ce_t in zip(result.plan.windows, result.fused,
                                           result.losses.window_ce_student, result.losses.window_ce_ta)
        ],
        "overlaps": [o.to_dict() for o in result.losses.overlaps],
        "losses": result.losses.report.to_dict(),
        "metrics": {
            "miou_ta": result.miou_ta,
            "miou_ensemble": result.miou_ensemble,
            "ta": result.metrics_ta,
            "ensemble": result.metrics_ensemble,
        },
    }


def scene_digests(path) -> dict[str, str]:
    path = Path(path)
    names = ["spec.json", *SCENE_FILES.values()]
    return {n: file_digest(path / n) for n in names if (path / n).exists()}
