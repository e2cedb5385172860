"""
Redundancy elimination layer.

A detection is redundant when another detection of the SAME class contains
it, or covers at least ``rf`` of its area (overlap fraction measured against
the redundant box). Redundant indices are collected against the original set
first and removed in one go afterwards.

When two boxes are redundant with respect to each other (identical boxes, or
both over the threshold) only one of them is flagged: the one with the lower
score, or the higher index when scores tie.

Raising ``rf`` keeps every survivor only while no same-class pair covers each
other at the lower threshold. A pair that is mutual at one ``rf`` and one-sided
at a higher one flips its survivor to the box that is no longer covered.
"""

import logging
from typing import Callable, Dict, List, Set

import numpy as np

from .detections import DetectionSet
from .geometry import pairwise_containment, pairwise_overlap_fraction

logger = logging.getLogger(__name__)

# Default redundant factor.
DEFAULT_RF = 0.60

RelationFn = Callable[[np.ndarray], np.ndarray]


def _class_groups(ds: DetectionSet) -> Dict[str, List[int]]:
    groups: Dict[str, List[int]] = {}
    for i, d in enumerate(ds.detections):
        groups.setdefault(d.label, []).append(i)
    return groups


def _flag_redundant(ds: DetectionSet, relation: RelationFn) -> Set[int]:
    """
    Flag indices under a same-class redundancy relation.

    ``relation`` maps an ``(n, 4)`` box array to a boolean matrix whose entry
    ``[i, j]`` says box i is redundant with respect to box j.
    """
    flagged: Set[int] = set()
    boxes = ds.boxes_array()
    scores = np.array([d.score for d in ds.detections], dtype=np.float64)

    for members in _class_groups(ds).values():
        if len(members) < 2:
            continue
        idx = np.asarray(members)
        rel = relation(boxes[idx])
        np.fill_diagonal(rel, False)

        s = scores[idx]
        # beats[i, j]: detection j outranks detection i
        beats = (s[None, :] > s[:, None]) | (
            (s[None, :] == s[:, None]) & (idx[None, :] < idx[:, None])
        )
        redundant = rel & (~rel.T | beats)
        flagged.update(int(i) for i in idx[redundant.any(axis=1)])

    return flagged


def _containment(arr: np.ndarray) -> np.ndarray:
    return pairwise_containment(arr)


def _containment_or_overlap(rf: float) -> RelationFn:
    def relation(arr: np.ndarray) -> np.ndarray:
        return pairwise_containment(arr) | (pairwise_overlap_fraction(arr) >= rf)

    return relation


def _check_rf(rf: float) -> None:
    if not 0.0 <= rf <= 1.0:
        raise ValueError(f"rf must lie in [0, 1], got {rf}")


def find_contained_redundant(ds: DetectionSet) -> Set[int]:
    """
    Indices of detections fully contained in another same-class detection.

    Args:
        ds: Detection set of one image

    Returns:
        Set of redundant indices; for car@[2,2,4,4] followed by
        car@[0,0,10,10] this is {0}
    """
    return _flag_redundant(ds, _containment)


def find_overlap_redundant(ds: DetectionSet, rf: float = DEFAULT_RF) -> Set[int]:
    """
    Indices of detections contained in, or covered at least ``rf`` by,
    another same-class detection.

    Args:
        ds: Detection set of one image
        rf: Redundant factor in [0, 1]

    Returns:
        Set of redundant indices

    Raises:
        ValueError: If rf is outside [0, 1]
        ZeroAreaBox: If a zero-area box has a same-class peer
    """
    _check_rf(rf)
    return _flag_redundant(ds, _containment_or_overlap(rf))


def apply_containment_filter(ds: DetectionSet) -> DetectionSet:
    """Remove detections contained in a same-class detection."""
    flagged = find_contained_redundant(ds)
    if flagged:
        logger.debug(f"{ds.image_id}: containment removed {len(flagged)} boxes")
    return ds.without(flagged)


def apply_redundancy_filter(ds: DetectionSet, rf: float = DEFAULT_RF) -> DetectionSet:
    """
    Remove every redundant detection (containment or overlap >= rf).

    Survivors keep their relative order and their logits.

    Args:
        ds: Detection set of one image
        rf: Redundant factor in [0, 1]

    Returns:
        Filtered detection set
    """
    flagged = find_overlap_redundant(ds, rf)
    if flagged:
        logger.debug(f"{ds.image_id}: overlap rule removed {len(flagged)} boxes")
    return ds.without(flagged)


__all__ = [
    "DEFAULT_RF",
    "find_contained_redundant",
    "find_overlap_redundant",
    "apply_containment_filter",
    "apply_redundancy_filter",
]
