"""
Shape-based confidence and gating.

Each detection may come with counts of basic shapes found in its region
(square, triangle, rectangle, parallelogram, trapezoid). The counts are
compared against the expected ranges of the detection's class:

    C = 1 - 1 / (1 + exp(-alpha * sum(((s - k) / max(k, 1)) ** 2)))

where ``k`` is ``s`` itself when ``s`` lies in the expected range and the
nearer range bound otherwise. ``C`` is reported; the gate keeps a detection
only when every count lies in range (C == 0.5) and boosts its own-class
logit, and removes it otherwise.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .detections import DEFAULT_VOCABULARY, Detection, DetectionSet, scale_detection
from .errors import NegativeCount, SchemaError
from .knowledge import SHAPES, ShapeKnowledge
from .utils import read_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShapeCounts:
    """Detected shape counts of one detection; missing shapes count as 0."""

    counts: Mapping[str, int]

    def __post_init__(self):
        cleaned = {}
        for raw_shape, value in dict(self.counts).items():
            shape = str(raw_shape).strip().lower()
            if shape not in SHAPES:
                raise SchemaError(f"Unknown shape {raw_shape!r}", field=str(raw_shape))
            if not isinstance(value, int) or isinstance(value, bool):
                raise SchemaError("Shape count must be an integer", field=shape)
            if value < 0:
                raise NegativeCount(f"Negative count {value} for shape '{shape}'")
            cleaned[shape] = value
        object.__setattr__(self, "counts", cleaned)

    def get(self, shape: str) -> int:
        return self.counts.get(shape, 0)

    def to_dict(self) -> Dict[str, int]:
        return {shape: self.counts[shape] for shape in SHAPES if shape in self.counts}


@dataclass(frozen=True)
class ShapeGateConfig:
    shape_alpha: float = 1.0
    boost_percent: float = 10.0

    def __post_init__(self):
        if not self.shape_alpha > 0:
            raise ValueError(f"shape_alpha must be > 0, got {self.shape_alpha}")
        if self.boost_percent < 0:
            raise ValueError(f"boost_percent must be >= 0, got {self.boost_percent}")


@dataclass(frozen=True)
class GateDecision:
    """Outcome of the shape gate for one detection."""

    keep: bool
    detection: Optional[Detection]
    error_sum: float
    confidence: float


def relative_error_sum(s: ShapeCounts, k: Mapping[str, Tuple[int, int]]) -> float:
    """
    Sum of squared relative errors against expected count ranges.

    Example:
        >>> relative_error_sum(ShapeCounts({"triangle": 2}), {"triangle": (0, 0)})
        4.0
    """
    total = 0.0
    for shape in SHAPES:
        observed = s.get(shape)
        lo, hi = k.get(shape, (0, 0))
        expected = min(max(observed, lo), hi)
        total += ((observed - expected) / max(expected, 1)) ** 2
    return total


def confidence_from_error(error_sum: float, shape_alpha: float = 1.0) -> float:
    if not shape_alpha > 0:
        raise ValueError(f"shape_alpha must be > 0, got {shape_alpha}")
    z = shape_alpha * error_sum
    # 1 - 1/(1 + e^-z) == e^-z / (1 + e^-z); stays finite for large z
    return 1.0 / (1.0 + math.exp(z)) if z < 700 else 0.0


def shape_confidence(
    s: ShapeCounts, k: Mapping[str, Tuple[int, int]], shape_alpha: float = 1.0
) -> float:
    """
    Shape confidence in (0, 0.5]; exactly 0.5 when every count is in range.

    Example:
        >>> round(shape_confidence(ShapeCounts({"rectangle": 2}), {"rectangle": (1, 1)}), 6)
        0.268941
    """
    return confidence_from_error(relative_error_sum(s, k), shape_alpha)


def apply_shape_gate(
    d: Detection,
    s: ShapeCounts,
    sk: ShapeKnowledge,
    cfg: ShapeGateConfig = ShapeGateConfig(),
    vocabulary: Sequence[str] = DEFAULT_VOCABULARY,
) -> GateDecision:
    """
    Keep and boost a detection whose shape counts match its class, or drop it.

    Raises:
        UnknownClass: If the detection's class has no row in ``sk``
    """
    ranges = sk.ranges(d.label)
    error = relative_error_sum(s, ranges)
    confidence = confidence_from_error(error, cfg.shape_alpha)
    if error > 0:
        return GateDecision(keep=False, detection=None, error_sum=error, confidence=confidence)

    factor = 1.0 + cfg.boost_percent / 100.0
    if factor != 1.0:
        d = scale_detection(d, factor, vocabulary)
    return GateDecision(keep=True, detection=d, error_sum=error, confidence=confidence)


def apply_shape_gate_set(
    ds: DetectionSet,
    counts_by_uid: Mapping[str, ShapeCounts],
    sk: ShapeKnowledge,
    cfg: ShapeGateConfig = ShapeGateConfig(),
    vocabulary: Sequence[str] = DEFAULT_VOCABULARY,
) -> Tuple[DetectionSet, List[Dict[str, Any]]]:
    """
    Gate every detection of an image that has shape counts.

    Detections without counts pass through unchanged.

    Returns:
        The gated set and one record per gated detection (uid, label,
        error sum, confidence, kept)
    """
    kept = []
    records = []
    for d in ds.detections:
        counts = counts_by_uid.get(d.uid)
        if counts is None:
            kept.append(d)
            continue
        decision = apply_shape_gate(d, counts, sk, cfg, vocabulary)
        records.append(
            {
                "id": d.uid,
                "label": d.label,
                "error_sum": decision.error_sum,
                "confidence": decision.confidence,
                "kept": decision.keep,
            }
        )
        if decision.detection is not None:
            kept.append(decision.detection)

    removed = sum(1 for r in records if not r["kept"])
    if removed:
        logger.debug(f"{ds.image_id}: shape gate removed {removed} detections")
    return ds.with_detections(kept), records


def parse_shape_count_document(data: Any) -> Dict[str, Dict[int, ShapeCounts]]:
    """
    Parse shape-count files.

    Accepts one ``{"image_id", "per_detection": [{"index", "counts"}]}``
    object, a list of them, or ``{"images": [...]}``.

    Returns:
        Counts keyed by image id, then by detection index
    """
    if isinstance(data, dict) and "images" in data:
        records = data["images"]
    elif isinstance(data, list):
        records = data
    else:
        records = [data]
    if not isinstance(records, list):
        raise SchemaError("'images' must be a list", field="images")

    result: Dict[str, Dict[int, ShapeCounts]] = {}
    for i, record in enumerate(records):
        where = f"images[{i}]"
        if not isinstance(record, dict) or "image_id" not in record:
            raise SchemaError("Shape-count entry needs an 'image_id'", field=where)
        entries = record.get("per_detection", [])
        if not isinstance(entries, list):
            raise SchemaError("'per_detection' must be a list", field=f"{where}.per_detection")

        per_image: Dict[int, ShapeCounts] = {}
        for j, entry in enumerate(entries):
            item = f"{where}.per_detection[{j}]"
            if not isinstance(entry, dict):
                raise SchemaError("Entry must be an object", field=item)
            index = entry.get("index")
            if not isinstance(index, int) or isinstance(index, bool) or index < 0:
                raise SchemaError("'index' must be a non-negative integer", field=f"{item}.index")
            counts = entry.get("counts")
            if not isinstance(counts, dict):
                raise SchemaError("'counts' must be an object", field=f"{item}.counts")
            if index in per_image:
                raise SchemaError(f"Duplicate index {index}", field=f"{item}.index")
            try:
                per_image[index] = ShapeCounts(counts)
            except SchemaError as e:
                raise SchemaError(str(e), field=f"{item}.counts") from e
        result[str(record["image_id"])] = per_image
    return result


def rekey_shape_counts(
    counts: Mapping[str, Mapping[int, ShapeCounts]], sets: Sequence[DetectionSet]
) -> Dict[str, ShapeCounts]:
    """
    Key shape counts by provenance id using the original detection sets.

    Raises:
        SchemaError: If an index is out of range for its image, or the image
            is unknown
    """
    by_image = {ds.image_id: ds for ds in sets}
    result: Dict[str, ShapeCounts] = {}
    for image_id, per_index in counts.items():
        ds = by_image.get(image_id)
        if ds is None:
            raise SchemaError(f"Shape counts reference unknown image '{image_id}'")
        for index, shape_counts in per_index.items():
            if index >= len(ds):
                raise SchemaError(
                    f"Shape counts reference detection {index} but image '{image_id}' "
                    f"has {len(ds)} detections"
                )
            result[ds[index].uid] = shape_counts
    return result


def read_shape_counts(path: Union[str, Path]) -> Dict[str, Dict[int, ShapeCounts]]:
    counts = parse_shape_count_document(read_json(path))
    logger.info(f"Loaded shape counts for {len(counts)} images from {path}")
    return counts


def shape_counts_to_document(
    counts: Mapping[str, Mapping[int, ShapeCounts]]
) -> Dict[str, List[Dict[str, Any]]]:
    return {
        "images": [
            {
                "image_id": image_id,
                "per_detection": [
                    {"index": index, "counts": per_index[index].to_dict()}
                    for index in sorted(per_index)
                ],
            }
            for image_id, per_index in counts.items()
        ]
    }


__all__ = [
    "ShapeCounts",
    "ShapeGateConfig",
    "GateDecision",
    "relative_error_sum",
    "confidence_from_error",
    "shape_confidence",
    "apply_shape_gate",
    "apply_shape_gate_set",
    "parse_shape_count_document",
    "rekey_shape_counts",
    "read_shape_counts",
    "shape_counts_to_document",
]
