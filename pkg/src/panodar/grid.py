"""Dense grid conventions and per-pixel numeric primitives.

Grids are plain numpy arrays:

* logits: ``(C, H, W)`` float32, class-major, every value finite, ``C >= 2``
* labels: ``(H, W)`` non-negative integers
* boundaries / weights: ``(H, W)`` bool or 0/1

Reductions accumulate in float64 regardless of storage dtype.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

LogitsGrid = np.ndarray
LabelMap = np.ndarray
BoundaryMap = np.ndarray

CITYSCAPES_CLASSES = (
    "road", "sidewalk", "building", "wall", "fence", "pole",
    "traffic light", "traffic sign", "vegetation", "terrain", "sky",
    "person", "rider", "car", "truck", "bus", "train", "motorcycle",
    "bicycle",
)


@dataclass(frozen=True)
class ClassCatalog:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise InvalidInputError("a class catalog needs at least 2 classes")
        if len(set(names)) != len(names):
            raise InvalidInputError("class names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def default(cls) -> "ClassCatalog":
        return cls(CITYSCAPES_CLASSES)

    def check(self, logits: LogitsGrid) -> None:
        if logits.shape[0] != len(self):
            raise InvalidInputError(
                f"logits have {logits.shape[0]} channels but the catalog has {len(self)} classes"
            )


def as_logits(values, *, name: str = "logits") -> LogitsGrid:
    """Validate and return a ``(C, H, W)`` float32 logits grid."""
    arr = np.asarray(values)
    if arr.ndim != 3:
        raise InvalidInputError(f"{name} must have shape (C, H, W), got {arr.shape}")
    c, h, w = arr.shape
    if c < 2 or h < 1 or w < 1:
        raise InvalidInputError(f"{name} needs C >= 2, H >= 1, W >= 1, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating) and not np.issubdtype(arr.dtype, np.integer):
        raise InvalidInputError(f"{name} must be real valued, got dtype {arr.dtype}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return arr


def as_labels(values, num_classes: int | None = None, *, name: str = "labels",
              ignore_index: int | None = None) -> LabelMap:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must have shape (H, W), got {arr.shape}")
    if arr.dtype.kind not in "iub":
        raise InvalidInputError(f"{name} must hold integer class ids, got dtype {arr.dtype}")
    arr = arr.astype(np.int64, copy=False)
    if arr.size and arr.min() < 0:
        raise InvalidInputError(f"{name} contains negative class ids")
    if num_classes is not None and arr.size:
        bad = arr >= num_classes
        if ignore_index is not None:
            bad &= arr != ignore_index
        if bad.any():
            raise InvalidInputError(
                f"{name} contains class id {int(arr[bad].max())} >= {num_classes} classes"
            )
    return arr


def as_binary(values, *, name: str = "map") -> BoundaryMap:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must have shape (H, W), got {arr.shape}")
    if arr.dtype != np.bool_:
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise InvalidInputError(f"{name} must be binary (0/1)")
        arr = arr.astype(bool)
    return arr


def _check_finite_vector(logits) -> np.ndarray:
    v = np.asarray(logits, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise InvalidInputError("expected a non-empty vector of scores")
    if not np.isfinite(v).all():
        raise InvalidInputError("scores must be finite")
    return v


def softmax_pixel(logits: Sequence[float]) -> np.ndarray:
    """Max-subtracted softmax of one pixel's class scores."""
    v = _check_finite_vector(logits)
    e = np.exp(v - v.max())
    return e / e.sum()


def softmax(logits: LogitsGrid, axis: int = 0) -> np.ndarray:
    """Softmax along the class axis, computed in float64."""
    x = np.asarray(logits, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    e /= e.sum(axis=axis, keepdims=True)
    return e


def logsumexp_map(logits: LogitsGrid) -> np.ndarray:
    """Per-pixel ``log(sum(exp(scores)))`` of a ``(C, H, W)`` grid, float64.

    Accumulates channel by channel to stay in cache on large grids. Uses
    ``log`` of the shifted sum (not ``log1p``) so a saturated one-hot pixel
    yields exactly its top score.
    """
    x = np.asarray(logits)
    m = x.max(axis=0).astype(np.float64)
    acc = np.zeros(m.shape, dtype=np.float64)
    for c in range(x.shape[0]):
        acc += np.exp(x[c] - m)
    return m + np.log(acc)


def log_softmax(logits: LogitsGrid, axis: int = 0) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def argmax_map(g: LogitsGrid) -> LabelMap:
    """Per-pixel argmax; ties resolve to the lowest class index."""
    g = np.asarray(g)
    best = g[0].copy()
    idx = np.zeros(best.shape, dtype=np.int64)
    for c in range(1, g.shape[0]):
        better = g[c] > best
        np.copyto(best, g[c], where=better)
        idx[better] = c
    return idx


def shannon_entropy(p: Sequence[float]) -> float:
    """Entropy in nats with ``0 ln 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum()) + 0.0


def entropy_map(logits: LogitsGrid) -> np.ndarray:
    """Per-pixel entropy (nats) of the softmaxed scores, shape ``(H, W)``."""
    x = np.asarray(logits)
    lse = logsumexp_map(x)
    h = np.zeros(lse.shape, dtype=np.float64)
    for c in range(x.shape[0]):
        logp = x[c] - lse
        h -= np.exp(logp) * logp
    return np.maximum(h, 0.0)


def top2_gap(p: Sequence[float]) -> float:
    p = np.asarray(p, dtype=np.float64)
    if p.size < 2:
        raise InvalidInputError("top2_gap needs at least 2 classes")
    top = np.partition(p, p.size - 2)[-2:]
    return float(top[1] - top[0])


def top2_gap_map(logits: LogitsGrid) -> np.ndarray:
    """Largest minus second-largest softmax probability, per pixel."""
    p = softmax(logits)
    c = p.shape[0]
    top = np.partition(p, c - 2, axis=0)[-2:]
    return top[1] - top[0]
