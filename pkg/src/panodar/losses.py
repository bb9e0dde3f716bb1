"""Scalar evaluation of the knowledge-adaptation loss stack.

Nothing here is differentiated; these are diagnostics for monitoring and
regression tests. All reductions run in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .grid import as_labels, as_logits, logsumexp_map

REDUCTIONS = ("sum", "mean")


def _check_reduction(reduction: str) -> None:
    if reduction not in REDUCTIONS:
        raise InvalidInputError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")


def consistency_mse(pred_i, pred_j, reduction: str = "mean") -> float:
    """Squared difference of two windows' predictions on their shared overlap."""
    _check_reduction(reduction)
    a = as_logits(pred_i, name="pred_i")
    b = as_logits(pred_j, name="pred_j")
    if a.shape != b.shape:
        raise InvalidInputError(f"overlap crops differ in shape: {a.shape} vs {b.shape}")
    sq = np.square(a.astype(np.float64) - b.astype(np.float64))
    total = float(sq.sum())
    return total / sq.size if reduction == "mean" else total


def pixel_cross_entropy(pred, target_labels, lse: np.ndarray | None = None) -> np.ndarray:
    """``-log softmax(pred)[target]`` per pixel, shape ``(H, W)``.

    ``lse`` may carry a precomputed :func:`logsumexp_map` of ``pred`` (or of
    a grid ``pred`` was cropped from, cropped the same way).
    """
    pred = as_logits(pred, name="pred")
    c, h, w = pred.shape
    target = as_labels(target_labels, name="target_labels")
    if target.shape != (h, w):
        raise InvalidInputError(f"targets are {target.shape}, predictions cover {(h, w)}")
    if target.size and target.max() >= c:
        raise InvalidInputError(f"target label {int(target.max())} >= {c} classes")
    if lse is None:
        lse = logsumexp_map(pred)
    elif lse.shape != (h, w):
        raise InvalidInputError(f"log-sum-exp map is {lse.shape}, expected {(h, w)}")
    picked = np.take_along_axis(pred, target[None], axis=0)[0]
    return lse - picked


def weighted_sum(ce: np.ndarray, weights=None, lam: float = 0.2, reduction: str = "sum") -> float:
    """Reduce a per-pixel CE map as ``sum(CE * (1 + lam * M))`` (or plain
    ``sum(CE)`` without a weight map)."""
    _check_reduction(reduction)
    if weights is not None:
        m = np.asarray(weights, dtype=np.float64)
        if m.shape != ce.shape:
            raise InvalidInputError(f"weight map is {m.shape}, expected {ce.shape}")
        if not np.isfinite(m).all():
            raise InvalidInputError("weight map contains NaN or Inf")
        ce = ce * (1.0 + lam * m)
    total = float(ce.sum())
    return total / ce.size if reduction == "mean" else total


def cross_entropy(pred, target_labels, weights=None, lam: float = 0.2,
                  reduction: str = "sum") -> float:
    """Hard-label cross-entropy, optionally up-weighting reliable pixels.

    With a weight map ``M`` each pixel contributes ``CE * (1 + lam * M)``;
    without one, plain ``CE``.
    """
    _check_reduction(reduction)
    return weighted_sum(pixel_cross_entropy(pred, target_labels), weights, lam, reduction)


def student_total(l_ce_ta_s: float, l_ce_t_s: float, l_bd_t_s: float) -> float:
    return l_ce_ta_s + l_ce_t_s + l_bd_t_s


def ta_total(l_ce_t_ta: float, l_cc: float, l_bd_t_ta: float) -> float:
    return l_ce_t_ta + l_cc + l_bd_t_ta


@dataclass(frozen=True)
class LossReport:
    l_cc: float
    l_ce_ta_s: float
    l_ce_t_s: float
    l_ce_t_ta: float
    l_bd_t_ta: float
    l_bd_t_s: float
    lam: float = 0.2

    def __post_init__(self):
        for name in ("l_cc", "l_ce_ta_s", "l_ce_t_s", "l_ce_t_ta", "l_bd_t_ta", "l_bd_t_s"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidInputError(f"{name} must be finite and non-negative, got {v}")

    @property
    def l_student_total(self) -> float:
        return student_total(self.l_ce_ta_s, self.l_ce_t_s, self.l_bd_t_s)

    @property
    def l_ta_total(self) -> float:
        return ta_total(self.l_ce_t_ta, self.l_cc, self.l_bd_t_ta)

    def to_dict(self) -> dict:
        return {
            "l_cc": self.l_cc,
            "l_ce_ta_s": self.l_ce_ta_s,
            "l_ce_t_s": self.l_ce_t_s,
            "l_ce_t_ta": self.l_ce_t_ta,
            "l_bd_t_ta": self.l_bd_t_ta,
            "l_bd_t_s": self.l_bd_t_s,
            "l_student_total": self.l_student_total,
            "l_ta_total": self.l_ta_total,
            "lambda": self.lam,
        }
