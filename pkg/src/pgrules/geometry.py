"""
Axis-aligned box arithmetic.

Boxes use the corner format [x1, y1, x2, y2] in pixels. The scalar functions
below implement containment, the asymmetric overlap fraction and IoU; the
``pairwise_*`` helpers compute the same quantities for whole box arrays with
numpy and feed the redundancy layer.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import SchemaError, ZeroAreaBox


@dataclass(frozen=True)
class Box:
    """
    Axis-aligned box in corner format.

    Swapped corners are normalized on construction, so ``x1 <= x2`` and
    ``y1 <= y2`` always hold.

    Example:
        >>> Box(10, 10, 0, 0)
        Box(x1=0.0, y1=0.0, x2=10.0, y2=10.0)
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        x1, y1, x2, y2 = (float(v) for v in (self.x1, self.y1, self.x2, self.y2))
        if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
            raise SchemaError(f"Box coordinates must be finite: {[x1, y1, x2, y2]}")
        object.__setattr__(self, "x1", min(x1, x2))
        object.__setattr__(self, "x2", max(x1, x2))
        object.__setattr__(self, "y1", min(y1, y2))
        object.__setattr__(self, "y2", max(y1, y2))

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        """
        Build a box from a COCO-style ``[x, y, width, height]`` record.

        Example:
            >>> Box.from_xywh(2, 3, 4, 5)
            Box(x1=2.0, y1=3.0, x2=6.0, y2=8.0)
        """
        return cls(x, y, x + w, y + h)

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Box":
        """Build a box from a 4-element corner list."""
        if len(values) != 4:
            raise SchemaError(f"Box needs 4 coordinates, got {len(values)}")
        return cls(*values)

    def to_list(self) -> list:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1


def area(b: Box) -> float:
    """
    Area of a box; degenerate boxes have area 0.

    Example:
        >>> area(Box(0, 0, 10, 6))
        60.0
    """
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def intersection_area(a: Box, b: Box) -> float:
    """
    Area of the overlap rectangle of two boxes, 0 when they are disjoint.

    Example:
        >>> intersection_area(Box(0, 0, 10, 10), Box(0, 0, 10, 6))
        60.0
    """
    w = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    h = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    return w * h


def is_contained(inner: Box, outer: Box) -> bool:
    """
    Check whether ``inner`` lies entirely within ``outer``.

    The four inequalities are non-strict, so identical boxes contain each
    other.

    Example:
        >>> is_contained(Box(2, 2, 4, 4), Box(0, 0, 10, 10))
        True
    """
    return (
        inner.x1 >= outer.x1
        and inner.y1 >= outer.y1
        and inner.x2 <= outer.x2
        and inner.y2 <= outer.y2
    )


def overlap_fraction(bi: Box, bj: Box) -> float:
    """
    Fraction of ``bi`` covered by ``bj``: A(bi ∩ bj) / A(bi).

    The ratio is asymmetric; it is measured against the FIRST box.

    Raises:
        ZeroAreaBox: If ``bi`` has zero area

    Example:
        >>> overlap_fraction(Box(0, 0, 10, 10), Box(0, 0, 10, 6))
        0.6
        >>> overlap_fraction(Box(0, 0, 10, 6), Box(0, 0, 10, 10))
        1.0
    """
    a = area(bi)
    if a <= 0:
        raise ZeroAreaBox(f"Overlap fraction undefined for zero-area box {bi.to_list()}")
    return intersection_area(bi, bj) / a


def iou(a: Box, b: Box) -> float:
    """
    Intersection over union of two boxes.

    Raises:
        ZeroAreaBox: If both boxes have zero area

    Example:
        >>> iou(Box(0, 0, 10, 10), Box(0, 0, 10, 6))
        0.6
    """
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0:
        raise ZeroAreaBox("IoU undefined for two zero-area boxes")
    return inter / union


def boxes_to_array(boxes: Iterable[Box]) -> np.ndarray:
    """Stack boxes into an ``(n, 4)`` float64 array."""
    rows = [b.to_list() for b in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)


def areas(arr: np.ndarray) -> np.ndarray:
    """Areas of an ``(n, 4)`` box array."""
    return (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])


def pairwise_intersection(arr: np.ndarray) -> np.ndarray:
    """``(n, n)`` matrix of intersection areas."""
    xx1 = np.maximum(arr[:, None, 0], arr[None, :, 0])
    yy1 = np.maximum(arr[:, None, 1], arr[None, :, 1])
    xx2 = np.minimum(arr[:, None, 2], arr[None, :, 2])
    yy2 = np.minimum(arr[:, None, 3], arr[None, :, 3])
    w = np.maximum(0.0, xx2 - xx1)
    h = np.maximum(0.0, yy2 - yy1)
    return w * h


def pairwise_containment(arr: np.ndarray) -> np.ndarray:
    """``(n, n)`` boolean matrix, entry ``[i, j]`` true when box i lies in box j."""
    return (
        (arr[:, None, 0] >= arr[None, :, 0])
        & (arr[:, None, 1] >= arr[None, :, 1])
        & (arr[:, None, 2] <= arr[None, :, 2])
        & (arr[:, None, 3] <= arr[None, :, 3])
    )


def pairwise_overlap_fraction(arr: np.ndarray) -> np.ndarray:
    """
    ``(n, n)`` matrix of overlap fractions, row i measured against box i.

    Raises:
        ZeroAreaBox: If any box has zero area
    """
    box_areas = areas(arr)
    if np.any(box_areas <= 0):
        bad = int(np.flatnonzero(box_areas <= 0)[0])
        raise ZeroAreaBox(
            f"Overlap fraction undefined for zero-area box {arr[bad].tolist()}"
        )
    return pairwise_intersection(arr) / box_areas[:, None]


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``(len(a), len(b))`` IoU matrix; pairs of zero-area boxes give 0."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)), dtype=np.float64)
    xx1 = np.maximum(a[:, None, 0], b[None, :, 0])
    yy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    xx2 = np.minimum(a[:, None, 2], b[None, :, 2])
    yy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.maximum(0.0, xx2 - xx1) * np.maximum(0.0, yy2 - yy1)
    union = areas(a)[:, None] + areas(b)[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        result = np.where(union > 0, inter / union, 0.0)
    return result


__all__ = [
    "Box",
    "area",
    "intersection_area",
    "is_contained",
    "overlap_fraction",
    "iou",
    "boxes_to_array",
    "areas",
    "pairwise_intersection",
    "pairwise_containment",
    "pairwise_overlap_fraction",
    "pairwise_iou",
]
