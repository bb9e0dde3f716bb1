"""Deterministic synthetic panoramas for end-to-end checks.

A scene is a labelled partition of the canvas (Voronoi cells or vertical
stripes), TA and student logits that encode the ground truth with
saturated confidence and are then corrupted, class-agnostic instance masks
(connected components of the ground truth, optionally jittered), and the
SAM-style boundary map of those masks.

Corruption probability grows toward the left/right canvas edges by
``distortion_gradient`` to mimic equirectangular stretching.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from .boundary import boundaries_from_labels, boundaries_from_masks
from .errors import InvalidInputError
from .fusion import FusionConfig, InstanceMaskSet, fuse_window
from .grid import argmax_map
from .metrics import evaluate, mean_iou
from .rng import SplitMix64

NOISE_MODES = ("interior-flip", "logit-blur")
LAYOUTS = ("voronoi", "stripes")

# Saturated enough that softmax is exactly one-hot in float64 for C <= 10**6,
# so clean scenes give zero cross-entropy.
CONFIDENT_LOGIT = 50.0
# A flipped pixel is a low-confidence mistake: the wrong class narrowly beats
# the true one.
FLIP_WRONG_LOGIT = 1.0
FLIP_TRUE_LOGIT = 0.5

_CROSS = ndimage.generate_binary_structure(2, 1)

# sub-stream numbers; fixed so scenes never change when a stage is added
_S_LAYOUT, _S_CLASSES, _S_TA, _S_STUDENT, _S_JITTER = range(5)


@dataclass(frozen=True)
class SceneSpec:
    width: int = 2048
    height: int = 400
    classes: int = 19
    region_count: int = 32
    seed: int = 0
    noise_rate: float = 0.0
    noise_mode: str = "interior-flip"
    mask_jitter: int = 0
    distortion_gradient: float = 0.0
    layout: str = "voronoi"
    student_noise_rate: float | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("scene must have positive width and height")
        if self.classes < 2:
            raise InvalidInputError("scene needs at least 2 classes")
        if self.region_count < 1:
            raise InvalidInputError("region_count must be at least 1")
        if self.width < self.region_count or self.width * self.height < self.region_count:
            raise InvalidInputError(
                f"{self.region_count} regions do not fit a {self.height}x{self.width} canvas"
            )
        for name in ("noise_rate", "student_noise_rate"):
            v = getattr(self, name)
            if v is not None and not 0 <= v < 1:
                raise InvalidInputError(f"{name} must lie in [0, 1)")
        if self.noise_mode not in NOISE_MODES:
            raise InvalidInputError(f"noise_mode must be one of {NOISE_MODES}")
        if self.layout not in LAYOUTS:
            raise InvalidInputError(f"layout must be one of {LAYOUTS}")
        if self.mask_jitter < 0:
            raise InvalidInputError("mask_jitter must be non-negative")
        if self.distortion_gradient < 0:
            raise InvalidInputError("distortion_gradient must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidInputError(f"unknown scene spec keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidInputError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    spec: SceneSpec
    gt_labels: np.ndarray
    ta_logits: np.ndarray
    student_logits: np.ndarray
    masks: InstanceMaskSet
    sam_boundaries: np.ndarray


def _layout(spec: SceneSpec, rng: SplitMix64) -> np.ndarray:
    """Region index per pixel."""
    h, w, r = spec.height, spec.width, spec.region_count
    if spec.layout == "stripes":
        edges = (np.arange(w) * r) // w
        return np.broadcast_to(edges, (h, w)).copy()
    xs = rng.integers(r, w)
    ys = rng.integers(r, h)
    yy = np.arange(h, dtype=np.int64)[:, None]
    xx = np.arange(w, dtype=np.int64)[None, :]
    best = np.full((h, w), np.iinfo(np.int64).max)
    region = np.zeros((h, w), dtype=np.int64)
    for k in range(r):
        d = (yy - ys[k]) ** 2 + (xx - xs[k]) ** 2
        closer = d < best
        best[closer] = d[closer]
        region[closer] = k
    return region


def corruption_rate(spec: SceneSpec, rate: float) -> np.ndarray:
    """Per-column corruption probability, rising toward both canvas edges."""
    w = spec.width
    edge = np.abs(2.0 * np.arange(w) / (w - 1) - 1.0) if w > 1 else np.zeros(1)
    return np.clip(rate * (1.0 + spec.distortion_gradient * edge), 0.0, 1.0)


def corrupt_logits(gt: np.ndarray, spec: SceneSpec, rate: float, rng: SplitMix64) -> tuple[np.ndarray, np.ndarray]:
    """One-hot logits of ``gt`` after corruption; also returns the mask of
    corrupted pixels."""
    c = spec.classes
    h, w = gt.shape
    logits = np.zeros((c, h, w), dtype=np.float32)
    rows, cols = np.indices((h, w))
    logits[gt, rows, cols] = CONFIDENT_LOGIT

    col_rate = corruption_rate(spec, rate)
    u = rng.random(h * w).reshape(h, w)
    if spec.noise_mode == "interior-flip":
        hit = ~boundaries_from_labels(gt) & (u < col_rate[None, :])
        wrong = (gt + 1 + rng.integers(h * w, c - 1).reshape(h, w)) % c
        r, q = np.nonzero(hit)
        logits[:, r, q] = 0.0
        logits[wrong[r, q], r, q] = FLIP_WRONG_LOGIT
        logits[gt[r, q], r, q] = FLIP_TRUE_LOGIT
    else:
        hit = u < col_rate[None, :]
        r, q = np.nonzero(hit)
        n = r.size
        beta = 0.5 + 0.5 * rng.random(n)
        jitter = rng.random(n * c).reshape(c, n)
        px = logits[:, r, q].astype(np.float64)
        mixed = (1.0 - beta) * px + beta * px.mean(axis=0) + jitter
        logits[:, r, q] = mixed.astype(np.float32)
    return logits, hit


def _components(gt: np.ndarray, classes: int) -> list[np.ndarray]:
    comps = []
    for c in range(classes):
        lab, n = ndimage.label(gt == c, structure=_CROSS)
        for k in range(1, n + 1):
            comps.append(lab == k)
    return comps


def _jitter(masks: list[np.ndarray], amount: int, rng: SplitMix64) -> list[np.ndarray]:
    if amount == 0 or not masks:
        return masks
    grow = rng.random(len(masks)) < 0.5
    out = []
    for m, g in zip(masks, grow):
        if g:
            m = ndimage.binary_dilation(m, structure=_CROSS, iterations=amount)
        else:
            m = ndimage.binary_erosion(m, structure=_CROSS, iterations=amount, border_value=1)
        if m.any():
            out.append(m)
    return out


def generate(spec: SceneSpec) -> SyntheticScene:
    root = SplitMix64(spec.seed)
    region = _layout(spec, root.spawn(_S_LAYOUT))
    region_class = root.spawn(_S_CLASSES).integers(spec.region_count, spec.classes)
    gt = region_class[region]

    ta, _ = corrupt_logits(gt, spec, spec.noise_rate, root.spawn(_S_TA))
    s_rate = spec.noise_rate if spec.student_noise_rate is None else spec.student_noise_rate
    student, _ = corrupt_logits(gt, spec, s_rate, root.spawn(_S_STUDENT))

    comps = _jitter(_components(gt, spec.classes), spec.mask_jitter, root.spawn(_S_JITTER))
    if comps:
        masks = InstanceMaskSet(np.stack(comps))
    else:
        masks = InstanceMaskSet.empty(spec.height, spec.width)
    label_dtype = np.uint8 if spec.classes <= 256 else np.uint16
    return SyntheticScene(
        spec=spec,
        gt_labels=gt.astype(label_dtype),
        ta_logits=ta,
        student_logits=student,
        masks=masks,
        sam_boundaries=boundaries_from_masks(masks),
    )


def measure_improvement(scene: SyntheticScene, cfg: FusionConfig = FusionConfig(),
                        masks: InstanceMaskSet | None = None) -> tuple[float, float]:
    """mIoU of the TA argmax and of the fused ensemble against ground truth,
    fusing over the whole canvas as one window."""
    masks = scene.masks if masks is None else masks
    c = scene.spec.classes
    ta_pred = argmax_map(scene.ta_logits)
    fused = fuse_window(masks, scene.ta_logits, cfg)
    miou_ta = mean_iou(evaluate(scene.gt_labels, ta_pred, c))
    miou_ens = mean_iou(evaluate(scene.gt_labels, fused.ensemble_labels, c))
    return miou_ta, miou_ens
