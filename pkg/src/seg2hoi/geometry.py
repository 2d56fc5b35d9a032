"""Box and binary-mask algebra.

Boxes live in normalized (cx, cy, w, h) coordinates relative to image
width/height. Masks are bit grids at the backbone feature resolution
(H/4 x W/4); box rasterization uses cell-center inclusion so every
operation is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class NoForegroundError(ValueError):
    """Raised when an operation needs at least one foreground cell."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, normalized center form."""

    cx: float
    cy: float
    w: float
    h: float

    def corners(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) corner form."""
        return (
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )

    @staticmethod
    def from_corners(x0: float, y0: float, x1: float, y1: float) -> "Box":
        return Box(0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def validate(self) -> None:
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center out of range: {self}")
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative box size: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass
class BinaryMask:
    """Bit grid; cells are 0/1 uint8."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError("mask must be 2-D")
        self.data = (data > 0).astype(np.uint8)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def area(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BinaryMask)
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def contains(self, other: "BinaryMask") -> bool:
        """True when every 1-cell of `other` is also set here."""
        return bool(np.all(self.data >= other.data))

    @staticmethod
    def zeros(height: int, width: int) -> "BinaryMask":
        return BinaryMask(np.zeros((height, width), dtype=np.uint8))


def giou(a: Box, b: Box) -> float:
    """Generalized IoU in (-1, 1]; cost form is 1 - giou.

    Degenerate zero-area boxes give an IoU term of 0 while the
    enclosing-box term stays defined; never returns NaN.
    """
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    inter_w = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    inter_h = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    iou = inter / union if union > 0 else 0.0
    enclose = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0))
    if enclose <= 0:
        return iou
    return iou - (enclose - union) / enclose


def box_l1(a: Box, b: Box) -> float:
    """Sum of absolute coordinate differences in (cx, cy, w, h) form."""
    return (
        abs(a.cx - b.cx) + abs(a.cy - b.cy) + abs(a.w - b.w) + abs(a.h - b.h)
    )


def expand_box(b: Box, gamma: float) -> Box:
    """Grow the corner form by `gamma` per side, clamped to [0, 1]."""
    x0, y0, x1, y1 = b.corners()
    return Box.from_corners(
        max(0.0, x0 - gamma),
        max(0.0, y0 - gamma),
        min(1.0, x1 + gamma),
        min(1.0, y1 + gamma),
    )


def box_intersection(a: Box, b: Box) -> Optional[Box]:
    """Corner-form interval intersection; None when disjoint on an axis."""
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    x0, x1 = max(ax0, bx0), min(ax1, bx1)
    y0, y1 = max(ay0, by0), min(ay1, by1)
    if x0 > x1 or y0 > y1:
        return None
    return Box.from_corners(x0, y0, x1, y1)


def mask_union(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    """Cell-wise OR; dimensions must agree."""
    if a.data.shape != b.data.shape:
        raise ValueError(
            f"mask dimensions differ: {a.data.shape} vs {b.data.shape}"
        )
    return BinaryMask(a.data | b.data)


def mask_to_box(m: BinaryMask) -> Box:
    """Tightest normalized box covering every 1-cell.

    Raises NoForegroundError on an empty mask so callers can skip the pair.
    """
    rows = np.flatnonzero(m.data.any(axis=1))
    if rows.size == 0:
        raise NoForegroundError("mask has no foreground cells")
    cols = np.flatnonzero(m.data.any(axis=0))
    h, w = m.data.shape
    return Box.from_corners(
        cols[0] / w, rows[0] / h, (cols[-1] + 1) / w, (rows[-1] + 1) / h
    )


def rasterize_box(b: Box, height: int, width: int) -> BinaryMask:
    """Cells whose centers fall inside the box (inclusive edges)."""
    x0, y0, x1, y1 = b.corners()
    xc = (np.arange(width) + 0.5) / width
    yc = (np.arange(height) + 0.5) / height
    inside = ((yc >= y0) & (yc <= y1))[:, None] & ((xc >= x0) & (xc <= x1))[None, :]
    return BinaryMask(inside.astype(np.uint8))


def crop_mask(m: BinaryMask, b: Optional[Box]) -> BinaryMask:
    """Zero out cells outside the box; None (empty) box gives a zero mask."""
    if b is None:
        return BinaryMask.zeros(m.height, m.width)
    keep = rasterize_box(b, m.height, m.width)
    return BinaryMask(m.data & keep.data)


def rle_encode(m: BinaryMask) -> dict:
    """COCO-style run-length encoding.

    Column-major run lengths starting with a 0-run (which may be zero when
    the first cell is foreground). Canonical: no interior zero-length runs.
    """
    flat = m.data.flatten(order="F")
    counts: list[int] = []
    if flat.size == 0:
        return {"size": [m.height, m.width], "counts": []}
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds)
    if flat[0] == 1:
        counts.append(0)
    counts.extend(int(r) for r in runs)
    return {"size": [m.height, m.width], "counts": counts}


def rle_decode(rle: dict) -> BinaryMask:
    """Inverse of rle_encode."""
    h, w = rle["size"]
    counts = rle["counts"]
    if sum(counts) != h * w:
        raise ValueError("run lengths do not cover the mask")
    flat = np.zeros(h * w, dtype=np.uint8)
    pos = 0
    val = 0
    for c in counts:
        if val:
            flat[pos : pos + c] = 1
        pos += c
        val ^= 1
    return BinaryMask(flat.reshape((h, w), order="F"))
