"""Cross-task fusion of class-agnostic instance masks with semantic logits.

Each mask receives one class label taken from the TA's per-pixel argmax
inside it: the dominant label when its coverage rate clears an
area-dependent threshold, otherwise the minimum-entropy label among the
three most frequent ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .errors import DegenerateInputError, InvalidInputError
from .grid import argmax_map, as_logits, entropy_map

RULE_LCR = "lcr"
RULE_ENTROPY = "entropy"
# scores closer than this count as tied (channel summation order differs per label)
ENTROPY_TIE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class InstanceMaskSet:
    """Ordered stack of binary masks, shape ``(M, H, W)``. Masks may overlap."""

    masks: np.ndarray
    ids: tuple[int, ...] = ()

    def __post_init__(self):
        masks = np.asarray(self.masks)
        if masks.ndim != 3:
            raise InvalidInputError(f"mask stack must have shape (M, H, W), got {masks.shape}")
        if masks.dtype != np.bool_:
            if masks.size and not np.isin(masks, (0, 1)).all():
                raise InvalidInputError("masks must be binary")
            masks = masks.astype(bool)
        if masks.shape[1] < 1 or masks.shape[2] < 1:
            raise InvalidInputError("masks need a non-empty H x W frame")
        areas = masks.reshape(len(masks), masks.shape[1] * masks.shape[2]).sum(axis=1)
        if (areas == 0).any():
            raise InvalidInputError(f"mask {int(np.argmin(areas))} is empty")
        ids = tuple(int(i) for i in self.ids) if len(self.ids) else tuple(range(len(masks)))
        if len(ids) != len(masks):
            raise InvalidInputError("one id per mask is required")
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "_areas", areas.astype(np.int64))

    @classmethod
    def empty(cls, height: int, width: int) -> "InstanceMaskSet":
        return cls(np.zeros((0, height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.masks.shape[1]

    @property
    def width(self) -> int:
        return self.masks.shape[2]

    @property
    def areas(self) -> np.ndarray:
        return self._areas

    def __len__(self) -> int:
        return len(self.masks)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.masks)

    def crop(self, x_start: int, width: int) -> "InstanceMaskSet":
        """Column crop; masks left empty by the crop are dropped."""
        if x_start < 0 or x_start + width > self.width or width < 1:
            raise InvalidInputError(f"crop {x_start}+{width} outside mask width {self.width}")
        sub = self.masks[:, :, x_start:x_start + width]
        keep = sub.reshape(len(sub), self.height * width).any(axis=1)
        return InstanceMaskSet(sub[keep], tuple(i for i, k in zip(self.ids, keep) if k))


@dataclass(frozen=True)
class FusionConfig:
    theta_default: float = 0.5
    theta_medium: float = 0.7
    medium_area_min: int = 100
    medium_area_max: int = 1000
    top_k: int = 3

    def __post_init__(self):
        # 0 is allowed: it reduces the rule to plain majority voting
        if not 0 <= self.theta_default <= self.theta_medium <= 1:
            raise InvalidInputError("need 0 <= theta_default <= theta_medium <= 1")
        if not self.medium_area_min < self.medium_area_max:
            raise InvalidInputError("medium_area_min must be below medium_area_max")
        if self.top_k < 1:
            raise InvalidInputError("top_k must be positive")


@dataclass(frozen=True)
class MaskReport:
    mask_index: int
    mask_id: int
    area: int
    label: int
    rule: str
    lcr: float

    def to_dict(self) -> dict:
        return {
            "mask_index": self.mask_index,
            "mask_id": self.mask_id,
            "area": self.area,
            "label": self.label,
            "rule": self.rule,
            "lcr": self.lcr,
        }


@dataclass(frozen=True, eq=False)
class FusedWindow:
    """Fusion output for one window.

    ``ensemble_logits`` is built on first access: one-hot rows of the
    assigned label on mask-covered pixels, the TA's raw logits elsewhere.
    """

    ensemble_labels: np.ndarray
    weight_map: np.ndarray
    covered: np.ndarray
    ta_logits: np.ndarray = field(repr=False)
    per_mask_report: list[MaskReport] = field(default_factory=list)

    @cached_property
    def ensemble_logits(self) -> np.ndarray:
        c = self.ta_logits.shape[0]
        one_hot = np.arange(c)[:, None, None] == self.ensemble_labels[None]
        return np.where(self.covered[None], one_hot.astype(np.float32), self.ta_logits)


def _check_mask(mask, shape) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape):
        raise InvalidInputError(f"mask shape {mask.shape} does not match grid {tuple(shape)}")
    return mask


def label_histogram(mask, labels) -> dict[int, int]:
    """Counts of each label over the mask's pixels, keyed by class id."""
    labels = np.asarray(labels)
    mask = _check_mask(mask, labels.shape)
    counts = np.bincount(labels[mask].ravel())
    return {int(c): int(n) for c, n in enumerate(counts) if n}


def label_coverage_rate(hist: dict[int, int], label: int) -> float:
    total = sum(hist.values())
    if total <= 0:
        raise InvalidInputError("coverage rate of an empty mask is undefined")
    return hist.get(label, 0) / total


def select_theta(area: int, cfg: FusionConfig) -> float:
    if cfg.medium_area_min <= area <= cfg.medium_area_max:
        return cfg.theta_medium
    return cfg.theta_default


def _entropy_score(mask, label, ta_labels, entropies) -> float:
    support = mask & (ta_labels == label)
    n = int(support.sum())
    if n == 0:
        raise DegenerateInputError(f"label {label} has no supporting pixel in the mask")
    return float(entropies[support].sum(dtype=np.float64) / n)


def entropy_score(mask, label: int, ta_logits) -> float:
    """Mean per-pixel entropy over mask pixels whose TA argmax is ``label``."""
    ta_logits = as_logits(ta_logits, name="ta_logits")
    mask = _check_mask(mask, ta_logits.shape[1:])
    return _entropy_score(mask, label, argmax_map(ta_logits), entropy_map(ta_logits))


def _ranked(hist: dict[int, int]) -> list[int]:
    # descending count, ties to the lower class id
    return sorted(hist, key=lambda c: (-hist[c], c))


def _assign(mask, ta_labels, entropies, cfg: FusionConfig) -> tuple[int, str, float]:
    """``entropies`` is the per-pixel entropy map, or a zero-argument
    callable producing it (only invoked when the entropy rule is needed)."""
    hist = label_histogram(mask, ta_labels)
    if not hist:
        raise InvalidInputError("cannot label an empty mask")
    ranked = _ranked(hist)
    y_max = ranked[0]
    lcr = label_coverage_rate(hist, y_max)
    if lcr >= select_theta(sum(hist.values()), cfg):
        return y_max, RULE_LCR, lcr
    if callable(entropies):
        entropies = entropies()
    best, best_score = None, np.inf
    for cand in sorted(ranked[:cfg.top_k]):
        score = _entropy_score(mask, cand, ta_labels, entropies)
        if score < best_score - ENTROPY_TIE_TOL:
            best, best_score = cand, score
    return best, RULE_ENTROPY, lcr


def assign_mask_label(mask, ta_logits, cfg: FusionConfig = FusionConfig()) -> tuple[int, str, float]:
    """Return ``(label, rule, lcr_of_dominant_label)`` for one mask."""
    ta_logits = as_logits(ta_logits, name="ta_logits")
    mask = _check_mask(mask, ta_logits.shape[1:])
    return _assign(mask, argmax_map(ta_logits), lambda: entropy_map(ta_logits), cfg)


def paint_order(areas: Sequence[int]) -> list[int]:
    """Largest mask first; equal areas keep input order. Later paints win."""
    return sorted(range(len(areas)), key=lambda m: -int(areas[m]))


def fuse_window(masks: InstanceMaskSet, ta_logits, cfg: FusionConfig = FusionConfig()) -> FusedWindow:
    ta_logits = as_logits(ta_logits, name="ta_logits")
    c, h, w = ta_logits.shape
    if (masks.height, masks.width) != (h, w):
        raise InvalidInputError(
            f"masks are {masks.height}x{masks.width} but TA logits are {h}x{w}"
        )
    ta_labels = argmax_map(ta_logits)
    cache: dict = {}

    def entropies() -> np.ndarray:
        if "h" not in cache:
            cache["h"] = entropy_map(ta_logits)
        return cache["h"]

    reports = []
    for m, mask in enumerate(masks):
        label, rule, lcr = _assign(mask, ta_labels, entropies, cfg)
        reports.append(MaskReport(m, masks.ids[m], int(masks.areas[m]), label, rule, lcr))

    owner = np.full((h, w), -1, dtype=np.int64)
    for m in paint_order(masks.areas):
        owner[masks.masks[m]] = m

    covered = owner >= 0
    assigned = np.array([r.label for r in reports] + [0], dtype=np.int64)
    by_lcr = np.array([r.rule == RULE_LCR for r in reports] + [False], dtype=bool)
    # owner -1 indexes the trailing sentinel entry
    labels = np.where(covered, assigned[owner], ta_labels)
    weights = by_lcr[owner] & covered
    return FusedWindow(labels, weights, covered, ta_logits, reports)
