"""
Detection records, per-image detection sets and their file format.

A Detection carries a corner-format box, a class label, a confidence score
and, optionally, one logit per vocabulary class. Every detection also has a
provenance id (``uid``) that survives all refinement layers, so refined
outputs can be paired with the baseline they came from.
"""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import MissingLogits, SchemaError, UnknownClass
from .geometry import Box, boxes_to_array
from .utils import read_json, write_json_atomic

logger = logging.getLogger(__name__)

# Six-class vocabulary of the mixed land/water vehicle data.
DEFAULT_VOCABULARY: Tuple[str, ...] = (
    "bicycle",
    "motorcycle",
    "car",
    "bus",
    "truck",
    "boat",
)


def canonical_class_name(name: Any) -> str:
    """
    Case-fold a class name so 'Bus', ' bus ' and 'BUS' compare equal.

    Example:
        >>> canonical_class_name(" Bus ")
        'bus'
    """
    if not isinstance(name, str) or not name.strip():
        raise SchemaError(f"Class name must be a non-empty string, got {name!r}")
    return name.strip().lower()


def class_index(label: str, vocabulary: Sequence[str]) -> int:
    """
    Position of ``label`` in ``vocabulary``.

    Raises:
        UnknownClass: If the label is not in the vocabulary
    """
    try:
        return list(vocabulary).index(label)
    except ValueError:
        raise UnknownClass(label) from None


def sigmoid(x: float) -> float:
    """Numerically stable logistic function."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def clamp_unit(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class Detection:
    """One predicted box with its label, score and optional logit row."""

    uid: str
    box: Box
    label: str
    score: float
    logits: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise SchemaError(
                f"Detection score must lie in [0, 1], got {self.score}", field="score"
            )
        if self.logits is not None and not isinstance(self.logits, tuple):
            object.__setattr__(self, "logits", tuple(float(v) for v in self.logits))

    def to_dict(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {
            "id": self.uid,
            "box": self.box.to_list(),
            "label": self.label,
            "score": self.score,
        }
        if self.logits is not None:
            record["logits"] = list(self.logits)
        return record


@dataclass(frozen=True)
class DetectionSet:
    """Ordered detections of one image."""

    image_id: str
    detections: Tuple[Detection, ...] = ()

    def __post_init__(self):
        if not isinstance(self.detections, tuple):
            object.__setattr__(self, "detections", tuple(self.detections))

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self) -> Iterator[Detection]:
        return iter(self.detections)

    def __getitem__(self, index: int) -> Detection:
        return self.detections[index]

    @property
    def labels(self) -> List[str]:
        return [d.label for d in self.detections]

    @property
    def has_logits(self) -> bool:
        """True when any detection in the set carries logits."""
        return any(d.logits is not None for d in self.detections)

    def boxes_array(self) -> np.ndarray:
        return boxes_to_array(d.box for d in self.detections)

    def with_detections(self, detections: Iterable[Detection]) -> "DetectionSet":
        return DetectionSet(image_id=self.image_id, detections=tuple(detections))

    def without(self, indices: Iterable[int]) -> "DetectionSet":
        """Drop the detections at ``indices``, keeping survivors in order."""
        dropped = set(indices)
        return self.with_detections(
            d for i, d in enumerate(self.detections) if i not in dropped
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "image_id": self.image_id,
            "detections": [d.to_dict() for d in self.detections],
        }


def scale_detection(
    d: Detection,
    factor: float,
    vocabulary: Sequence[str],
    whole_row: bool = False,
    require_logits: bool = False,
) -> Detection:
    """
    Multiply a detection's logits (or score) by ``factor`` and re-score it.

    With logits, either the whole row or only the own-class logit is
    scaled, and the new score is the logistic of the own-class logit.
    Without logits the score itself is scaled and clamped to [0, 1].

    Args:
        d: Detection to adjust
        factor: Multiplicative factor
        vocabulary: Class names indexing the logit row
        whole_row: Scale every logit instead of only the own-class one
        require_logits: Raise instead of falling back to the score

    Raises:
        MissingLogits: If ``require_logits`` is set and ``d`` has no logits
    """
    if d.logits is None:
        if require_logits:
            raise MissingLogits(
                f"Detection '{d.uid}' ({d.label}) has no logits to adjust"
            )
        return replace(d, score=clamp_unit(d.score * factor))

    own = class_index(d.label, vocabulary)
    if whole_row:
        logits = tuple(v * factor for v in d.logits)
    else:
        logits = tuple(v * factor if j == own else v for j, v in enumerate(d.logits))
    return replace(d, logits=logits, score=clamp_unit(sigmoid(logits[own])))


def _require(record: Dict, key: str, where: str) -> Any:
    if key not in record:
        raise SchemaError(f"Missing required key '{key}'", field=f"{where}.{key}")
    return record[key]


def parse_box(record: Dict, where: str) -> Box:
    if "box" in record:
        raw, field = record["box"], f"{where}.box"
    elif "bbox" in record:
        raw, field = record["bbox"], f"{where}.bbox"
    else:
        raise SchemaError("Detection needs a 'box' or 'bbox'", field=where)

    if not isinstance(raw, list) or len(raw) != 4:
        raise SchemaError("Expected a list of 4 numbers", field=field)
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
        raise SchemaError("Box coordinates must be numbers", field=field)

    try:
        if field.endswith(".bbox"):
            return Box.from_xywh(*raw)
        return Box.from_list(raw)
    except SchemaError as e:
        raise SchemaError(str(e), field=field) from e


def parse_detection(
    record: Any, image_id: str, index: int, vocabulary: Sequence[str], where: str
) -> Detection:
    """
    Parse one detection record.

    Accepts a corner ``box`` or a COCO ``bbox`` ([x, y, w, h]), a ``label``
    or a ``category_id`` indexing the vocabulary, a ``score`` and optional
    ``logits`` with one entry per vocabulary class.
    """
    if not isinstance(record, dict):
        raise SchemaError("Detection record must be an object", field=where)

    box = parse_box(record, where)

    if "label" in record:
        label = canonical_class_name(record["label"])
    elif "category_id" in record:
        category = record["category_id"]
        if not isinstance(category, int) or not 0 <= category < len(vocabulary):
            raise SchemaError(
                f"category_id {category!r} does not index the vocabulary",
                field=f"{where}.category_id",
            )
        label = vocabulary[category]
    else:
        raise SchemaError("Detection needs a 'label' or 'category_id'", field=where)
    if label not in vocabulary:
        raise UnknownClass(label)

    score = _require(record, "score", where)
    if not isinstance(score, (int, float)) or isinstance(score, bool):
        raise SchemaError("Score must be a number", field=f"{where}.score")
    if not 0.0 <= float(score) <= 1.0:
        raise SchemaError(
            f"Score must lie in [0, 1], got {score}", field=f"{where}.score"
        )

    logits = record.get("logits")
    if logits is not None:
        if not isinstance(logits, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in logits
        ):
            raise SchemaError("Logits must be a list of numbers", field=f"{where}.logits")
        if len(logits) != len(vocabulary):
            raise SchemaError(
                f"Expected {len(vocabulary)} logits, got {len(logits)}",
                field=f"{where}.logits",
            )
        logits = tuple(float(v) for v in logits)

    uid = record.get("id")
    if uid is None:
        uid = f"{image_id}#{index}"

    return Detection(
        uid=str(uid), box=box, label=label, score=float(score), logits=logits
    )


def parse_detection_document(
    data: Any, vocabulary: Sequence[str] = DEFAULT_VOCABULARY
) -> List[DetectionSet]:
    """
    Turn a parsed detection document into detection sets.

    Two layouts are accepted: the canonical ``{"images": [...]}`` object and
    a flat COCO results list grouped by ``image_id`` in order of first
    appearance.

    Raises:
        SchemaError: If a record is malformed (the message names the field)
        UnknownClass: If a label is not in ``vocabulary``
    """
    if isinstance(data, list):
        grouped: Dict[str, List[Dict]] = {}
        for i, record in enumerate(data):
            if not isinstance(record, dict):
                raise SchemaError("Result record must be an object", field=f"[{i}]")
            image_id = str(_require(record, "image_id", f"[{i}]"))
            grouped.setdefault(image_id, []).append(record)
        images = [
            {"image_id": image_id, "detections": records}
            for image_id, records in grouped.items()
        ]
    elif isinstance(data, dict):
        images = _require(data, "images", "<root>")
        if not isinstance(images, list):
            raise SchemaError("'images' must be a list", field="images")
    else:
        raise SchemaError("Detection document must be an object or a list")

    sets = []
    seen_images = set()
    for i, image in enumerate(images):
        where = f"images[{i}]"
        if not isinstance(image, dict):
            raise SchemaError("Image entry must be an object", field=where)
        image_id = str(_require(image, "image_id", where))
        if image_id in seen_images:
            raise SchemaError(f"Duplicate image_id '{image_id}'", field=where)
        seen_images.add(image_id)

        records = _require(image, "detections", where)
        if not isinstance(records, list):
            raise SchemaError("'detections' must be a list", field=f"{where}.detections")

        detections = [
            parse_detection(record, image_id, j, vocabulary, f"{where}.detections[{j}]")
            for j, record in enumerate(records)
        ]
        uids = [d.uid for d in detections]
        if len(set(uids)) != len(uids):
            raise SchemaError("Detection ids must be unique", field=f"{where}.detections")
        sets.append(DetectionSet(image_id=image_id, detections=tuple(detections)))

    return sets


def detection_sets_to_document(sets: Sequence[DetectionSet]) -> Dict[str, Any]:
    """Canonical document for a collection of detection sets."""
    return {"images": [ds.to_dict() for ds in sets]}


def read_detection_file(
    path: Union[str, Path], vocabulary: Sequence[str] = DEFAULT_VOCABULARY
) -> List[DetectionSet]:
    """Read and parse a detection file."""
    logger.info(f"Loading detections from {path}")
    sets = parse_detection_document(read_json(path), vocabulary)
    total = sum(len(ds) for ds in sets)
    logger.info(f"Loaded {total} detections across {len(sets)} images")
    return sets


def save_detections(sets: Sequence[DetectionSet], output_path: Union[str, Path]) -> str:
    """
    Save detection sets to a canonical JSON file (atomic write).

    Returns:
        Path to the saved file
    """
    total = sum(len(ds) for ds in sets)
    logger.info(f"Saving {total} detections to {output_path}")
    return write_json_atomic(detection_sets_to_document(sets), output_path)


__all__ = [
    "DEFAULT_VOCABULARY",
    "canonical_class_name",
    "class_index",
    "sigmoid",
    "clamp_unit",
    "Detection",
    "DetectionSet",
    "scale_detection",
    "parse_box",
    "parse_detection",
    "parse_detection_document",
    "detection_sets_to_document",
    "read_detection_file",
    "save_detections",
]
