"""Box and point primitives in top-left-origin pixel space (y grows downward)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box. Invariant: left <= right, top <= bottom, all >= 0."""

    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        for name in ("left", "top", "right", "bottom"):
            object.__setattr__(self, name, float(getattr(self, name)))
        coords = (self.left, self.top, self.right, self.bottom)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if any(c < 0 for c in coords):
            raise ValueError(f"box coordinates must be non-negative, got {coords}")
        if self.left > self.right or self.top > self.bottom:
            raise ValueError(
                f"box must satisfy left <= right and top <= bottom, got {coords}"
            )

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def area(self) -> float:
        return self.width * self.height


def midpoint(box: BBox) -> Point:
    return Point((box.left + box.right) / 2, (box.top + box.bottom) / 2)


def contains_midpoint(container: BBox, element: BBox) -> bool:
    """True when the element's midpoint lies inside the container, borders included."""
    mid = midpoint(element)
    return (
        container.left <= mid.x <= container.right
        and container.top <= mid.y <= container.bottom
    )


def union_bbox(boxes: Iterable[BBox]) -> BBox:
    boxes = list(boxes)
    if not boxes:
        raise ValueError("empty box set")
    return BBox(
        left=min(b.left for b in boxes),
        top=min(b.top for b in boxes),
        right=max(b.right for b in boxes),
        bottom=max(b.bottom for b in boxes),
    )


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union; 0.0 for disjoint or degenerate boxes."""
    ileft = max(a.left, b.left)
    itop = max(a.top, b.top)
    iright = min(a.right, b.right)
    ibottom = min(a.bottom, b.bottom)
    if ileft >= iright or itop >= ibottom:
        return 0.0
    inter = (iright - ileft) * (ibottom - itop)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0
