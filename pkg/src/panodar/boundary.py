"""Boundary maps, TA/SAM boundary reconciliation, and boundary losses.

A pixel is a boundary pixel when one of its in-bounds 4-neighbours carries a
different label (label maps) or lies outside the mask (mask sets).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidInputError
from .fusion import InstanceMaskSet
from .grid import as_binary, as_labels, as_logits, softmax


@dataclass(frozen=True)
class RefineConfig:
    alpha: float = 0.3

    def __post_init__(self):
        # the endpoints are accepted so alpha=0 can switch relocation off
        if not 0 <= self.alpha <= 1:
            raise InvalidInputError(f"alpha must lie in [0, 1], got {self.alpha}")


def _differs_from_neighbour(a: np.ndarray) -> np.ndarray:
    out = np.zeros(a.shape, dtype=bool)
    vert = a[1:, :] != a[:-1, :]
    horiz = a[:, 1:] != a[:, :-1]
    out[1:, :] |= vert
    out[:-1, :] |= vert
    out[:, 1:] |= horiz
    out[:, :-1] |= horiz
    return out


def boundaries_from_labels(labels) -> np.ndarray:
    labels = as_labels(labels)
    return _differs_from_neighbour(labels)


def boundaries_from_masks(masks: InstanceMaskSet) -> np.ndarray:
    out = np.zeros((masks.height, masks.width), dtype=bool)
    for mask in masks:
        out |= mask & _differs_from_neighbour(mask)
    return out


def _nearest_in_column(sam: np.ndarray) -> np.ndarray:
    """Row of the nearest ``sam`` pixel in the same column for every pixel,
    preferring the upper one on equal distance; -1 where the column is empty."""
    h = sam.shape[0]
    rows = np.arange(h)[:, None]
    up = np.maximum.accumulate(np.where(sam, rows, -1), axis=0)
    down = np.minimum.accumulate(np.where(sam, rows, h)[::-1], axis=0)[::-1]
    has_up = up >= 0
    has_down = down < h
    take_up = has_up & (~has_down | (rows - up <= down - rows))
    return np.where(take_up, up, np.where(has_down, down, -1))


@dataclass(frozen=True, eq=False)
class RefineResult:
    refined: np.ndarray
    agreed: int
    relocated: int
    retained: int


def refine_boundary_detailed(b_ta_i, b_ta_j, b_sam, logits_i, logits_j,
                             cfg: RefineConfig = RefineConfig()) -> RefineResult:
    """Like :func:`refine_boundary` but also counts how each TA pixel was resolved."""
    b_ta_i = as_binary(b_ta_i, name="b_ta_i")
    b_ta_j = as_binary(b_ta_j, name="b_ta_j")
    b_sam = as_binary(b_sam, name="b_sam")
    logits_i = as_logits(logits_i, name="logits_i")
    logits_j = as_logits(logits_j, name="logits_j")
    shape = b_ta_i.shape
    for name, arr in (("b_ta_j", b_ta_j), ("b_sam", b_sam)):
        if arr.shape != shape:
            raise InvalidInputError(f"{name} has shape {arr.shape}, expected {shape}")
    for name, arr in (("logits_i", logits_i), ("logits_j", logits_j)):
        if arr.shape[1:] != shape:
            raise InvalidInputError(f"{name} covers {arr.shape[1:]}, expected {shape}")
    if logits_i.shape[0] != logits_j.shape[0]:
        raise InvalidInputError("logits_i and logits_j disagree on the class count")

    refined = b_ta_i & b_ta_j & b_sam
    rest = b_ta_i & ~refined
    rows, cols = np.nonzero(rest)
    q_rows = _nearest_in_column(b_sam)[rows, cols]
    found = q_rows >= 0

    qr, qc = q_rows[found], cols[found]
    relocate = np.zeros(rows.shape, dtype=bool)
    if qr.size:
        gaps = []
        for logits in (logits_i, logits_j):
            p = softmax(logits[:, qr, qc])
            top = np.partition(p, p.shape[0] - 2, axis=0)[-2:]
            gaps.append(top[1] - top[0])
        relocate[found] = np.minimum(gaps[0], gaps[1]) < cfg.alpha

    refined[q_rows[relocate], cols[relocate]] = True
    keep = ~relocate
    refined[rows[keep], cols[keep]] = True
    return RefineResult(refined, int((b_ta_i & b_ta_j & b_sam).sum()), int(relocate.sum()), int(keep.sum()))


def refine_boundary(b_ta_i, b_ta_j, b_sam, logits_i, logits_j,
                    cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    """Reconcile two TA boundary maps of one overlap with SAM's boundary map.

    For each boundary pixel ``p`` of ``b_ta_i``:

    * boundary in ``b_ta_j`` and ``b_sam`` too: ``p`` is kept;
    * otherwise take the nearest ``b_sam`` pixel ``q`` in ``p``'s column
      (upper one on ties). If the top-2 softmax gap at ``q`` is below
      ``alpha`` in either window's logits, ``q`` replaces ``p``;
    * otherwise, or when the column holds no SAM boundary, ``p`` is kept.
    """
    return refine_boundary_detailed(b_ta_i, b_ta_j, b_sam, logits_i, logits_j, cfg).refined


def _boundary_count(b_ref: np.ndarray) -> int:
    c_o = int(b_ref.sum())
    if c_o == 0:
        raise DegenerateInputError("the refined boundary map has no boundary pixels")
    return c_o


def boundary_loss_ta(b_ref, b_ta_i, b_ta_j) -> float:
    b_ref = as_binary(b_ref, name="b_ref")
    b_ta_i = as_binary(b_ta_i, name="b_ta_i")
    b_ta_j = as_binary(b_ta_j, name="b_ta_j")
    if not b_ref.shape == b_ta_i.shape == b_ta_j.shape:
        raise InvalidInputError("boundary maps must share one shape")
    c_o = _boundary_count(b_ref)
    mismatches = int((b_ref ^ b_ta_i).sum()) + int((b_ref ^ b_ta_j).sum())
    return mismatches / c_o


def boundary_loss_student(b_ref, b_s) -> float:
    b_ref = as_binary(b_ref, name="b_ref")
    b_s = as_binary(b_s, name="b_s")
    if b_ref.shape != b_s.shape:
        raise InvalidInputError("boundary maps must share one shape")
    return int((b_ref ^ b_s).sum()) / _boundary_count(b_ref)
