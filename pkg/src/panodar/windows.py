"""Horizontal sliding-window planning over an equirectangular canvas.

Windows always span the full canvas height; only columns are windowed.
There is no wrap-around at the 0/360 degree seam.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import GeometryError, InvalidInputError

STITCH_MODES = ("concat", "average")


@dataclass(frozen=True)
class WindowRegion:
    index: int
    x_start: int
    width: int
    height: int

    @property
    def x_end(self) -> int:
        return self.x_start + self.width

    @property
    def columns(self) -> slice:
        return slice(self.x_start, self.x_end)


@dataclass(frozen=True)
class OverlapRegion:
    left_window: int
    right_window: int
    x_start: int
    width: int

    @property
    def x_end(self) -> int:
        return self.x_start + self.width

    def columns_in(self, window: WindowRegion) -> slice:
        """Column slice of this overlap in ``window``'s local frame."""
        lo = self.x_start - window.x_start
        if lo < 0 or lo + self.width > window.width:
            raise GeometryError(f"overlap at x={self.x_start} is not inside window {window.index}")
        return slice(lo, lo + self.width)


@dataclass(frozen=True)
class WindowPlan:
    canvas_width: int
    canvas_height: int
    window_width: int
    stride: int
    windows: tuple[WindowRegion, ...]
    overlaps: tuple[OverlapRegion, ...]

    def __len__(self) -> int:
        return len(self.windows)

    def coverage(self) -> np.ndarray:
        """Number of windows covering each canvas column."""
        counts = np.zeros(self.canvas_width, dtype=np.int64)
        for w in self.windows:
            counts[w.columns] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "canvas_width": self.canvas_width,
            "canvas_height": self.canvas_height,
            "window_width": self.window_width,
            "stride": self.stride,
            "windows": [asdict(w) for w in self.windows],
            "overlaps": [asdict(o) for o in self.overlaps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WindowPlan":
        try:
            plan = cls(
                canvas_width=int(d["canvas_width"]),
                canvas_height=int(d["canvas_height"]),
                window_width=int(d["window_width"]),
                stride=int(d["stride"]),
                windows=tuple(WindowRegion(**w) for w in d["windows"]),
                overlaps=tuple(OverlapRegion(**o) for o in d["overlaps"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GeometryError(f"malformed window plan: {exc}") from exc
        _validate_plan(plan)
        return plan


def _validate_plan(plan: WindowPlan) -> None:
    starts = [w.x_start for w in plan.windows]
    if not starts or any(b <= a for a, b in zip(starts, starts[1:])):
        raise GeometryError("window starts must be strictly increasing")
    for w in plan.windows:
        if w.x_start < 0 or w.x_end > plan.canvas_width or w.height != plan.canvas_height:
            raise GeometryError(f"window {w.index} does not fit the canvas")
    if (plan.coverage() == 0).any():
        raise GeometryError("windows leave canvas columns uncovered")
    for o in plan.overlaps:
        if o.width <= 0:
            raise GeometryError("overlap regions must have positive width")
        o.columns_in(plan.windows[o.left_window])
        o.columns_in(plan.windows[o.right_window])


def _check_geometry(canvas_w: int, canvas_h: int, win_w: int, stride: int) -> None:
    if canvas_h < 1 or canvas_w < 1:
        raise GeometryError(f"canvas must be non-empty, got {canvas_h}x{canvas_w}")
    if win_w > canvas_w:
        raise GeometryError(f"window width {win_w} exceeds canvas width {canvas_w}")
    if not 0 < stride <= win_w:
        raise GeometryError(f"stride must satisfy 0 < stride <= window width, got {stride}")


def _starts(canvas_w: int, win_w: int, stride: int) -> list[int]:
    starts = list(range(0, canvas_w - win_w + 1, stride))
    if starts[-1] + win_w < canvas_w:
        starts.append(canvas_w - win_w)
    return starts


def plan_overlapping(canvas_w: int, canvas_h: int, win_w: int, stride: int) -> WindowPlan:
    """Windows at ``0, stride, 2*stride, ...``; an overrunning last window is
    clamped to end at the canvas edge. One overlap per adjacent pair when
    ``stride < win_w``."""
    _check_geometry(canvas_w, canvas_h, win_w, stride)
    windows = tuple(
        WindowRegion(i, x, win_w, canvas_h) for i, x in enumerate(_starts(canvas_w, win_w, stride))
    )
    overlaps = []
    if stride < win_w:
        for left, right in zip(windows, windows[1:]):
            overlaps.append(OverlapRegion(left.index, right.index, right.x_start, left.x_end - right.x_start))
    return WindowPlan(canvas_w, canvas_h, win_w, stride, windows, tuple(overlaps))


def plan_nonoverlapping(canvas_w: int, canvas_h: int, win_w: int) -> WindowPlan:
    """Tiles with ``stride == win_w``. A clamped last tile may share columns
    with its neighbour; those are resolved by :func:`stitch`, not listed as
    overlaps."""
    _check_geometry(canvas_w, canvas_h, win_w, win_w)
    windows = tuple(
        WindowRegion(i, x, win_w, canvas_h) for i, x in enumerate(_starts(canvas_w, win_w, win_w))
    )
    return WindowPlan(canvas_w, canvas_h, win_w, win_w, windows, ())


def extract(g: np.ndarray, w: WindowRegion) -> np.ndarray:
    """Copy the window's columns out of a ``(..., H, W)`` grid."""
    g = np.asarray(g)
    if g.ndim < 2:
        raise InvalidInputError("grid must have at least 2 dimensions")
    h, width = g.shape[-2:]
    if w.x_start < 0 or w.x_end > width or w.height != h:
        raise GeometryError(
            f"window {w.index} (x={w.x_start}..{w.x_end}, h={w.height}) is outside a {h}x{width} grid"
        )
    return g[..., w.x_start:w.x_end].copy()


def stitch(plan: WindowPlan, parts: Sequence[np.ndarray], mode: str = "average") -> np.ndarray:
    """Rebuild a canvas-sized grid from per-window parts.

    ``concat``: windows are written left to right, so a later window owns
    any column it shares with an earlier one. ``average``: shared columns
    take the arithmetic mean of the covering windows.
    """
    if mode not in STITCH_MODES:
        raise InvalidInputError(f"unknown stitch mode {mode!r}")
    if len(parts) != len(plan.windows):
        raise InvalidInputError(f"expected {len(plan.windows)} parts, got {len(parts)}")
    parts = [np.asarray(p) for p in parts]
    lead = parts[0].shape[:-2]
    for w, p in zip(plan.windows, parts):
        if p.shape != lead + (plan.canvas_height, w.width):
            raise InvalidInputError(
                f"part {w.index} has shape {p.shape}, expected {lead + (plan.canvas_height, w.width)}"
            )
    shape = lead + (plan.canvas_height, plan.canvas_width)
    if mode == "concat":
        out = np.empty(shape, dtype=parts[0].dtype)
        for w, p in zip(plan.windows, parts):
            out[..., w.columns] = p
        return out

    acc = np.zeros(shape, dtype=np.float64)
    for w, p in zip(plan.windows, parts):
        acc[..., w.columns] += p
    counts = plan.coverage()
    single = counts == 1
    acc /= counts
    out = acc.astype(np.float32)
    # singly-covered columns are copied verbatim so they stay bit-identical
    for w, p in zip(plan.windows, parts):
        cols = np.nonzero(single[w.columns])[0]
        if cols.size:
            out[..., w.x_start + cols] = p[..., cols]
    return out
