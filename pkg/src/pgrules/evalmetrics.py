"""
Evaluation statistics for refined detections.

Computes, for a baseline and a refined detection collection against the
same ground truth:

- mean average precision at IoU 0.5 (101-point interpolated),
- average IoU of matched pairs at several IoU thresholds,
- false positives per class group (water / land),
- bounding-box reduction,
- confidence-score changes traced by provenance id.

Percentages computed here are shown next to the published values for the
same counts when the counts match a published row.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from tabulate import tabulate

from .detections import (
    DEFAULT_VOCABULARY,
    DetectionSet,
    canonical_class_name,
    parse_box,
)
from .errors import InvalidCounts, ProvenanceMismatch, SchemaError, UnknownClass
from .geometry import Box, boxes_to_array, pairwise_iou
from .utils import read_json

logger = logging.getLogger(__name__)

MAP_IOU = 0.5
FP_IOU = 0.5
AVG_IOU_THRESHOLDS = (0.5, 0.75, 0.9)
RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)

# Smallest IoU that still counts as a match when collecting IoUs for averaging
ANY_OVERLAP = 1e-12

DEFAULT_CLASS_GROUPS: Dict[str, Tuple[str, ...]] = {
    "water": ("boat",),
    "land": ("bicycle", "motorcycle", "car", "bus", "truck"),
}

# (baseline boxes, refined boxes) -> printed reduction percent
PUBLISHED_BOX_REDUCTION: Dict[Tuple[int, int], float] = {
    (598, 451): 37.88,
    (909, 726): 34.21,
    (6192, 5548): 10.56,
}

# (group, baseline FPs, refined FPs) -> printed reduction percent
PUBLISHED_FP_REDUCTION: Dict[Tuple[str, int, int], float] = {
    ("water", 110, 28): 74.55,
    ("land", 182, 111): 39.01,
    ("overall", 292, 139): 52.4,
}

PredsLike = Union[DetectionSet, Sequence[DetectionSet]]


@dataclass(frozen=True)
class Annotation:
    box: Box
    label: str


@dataclass(frozen=True)
class GroundTruthSet:
    """Ground-truth annotations per image."""

    images: Mapping[str, Tuple[Annotation, ...]] = field(default_factory=dict)

    def for_image(self, image_id: str) -> Tuple[Annotation, ...]:
        return tuple(self.images.get(image_id, ()))

    @property
    def total(self) -> int:
        return sum(len(a) for a in self.images.values())

    def class_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for annotations in self.images.values():
            for a in annotations:
                counts[a.label] = counts.get(a.label, 0) + 1
        return counts

    def to_dict(self) -> Dict[str, Any]:
        return {
            "images": [
                {
                    "image_id": image_id,
                    "annotations": [
                        {"box": a.box.to_list(), "label": a.label} for a in annotations
                    ],
                }
                for image_id, annotations in self.images.items()
            ]
        }


def parse_ground_truth_document(
    data: Any, vocabulary: Sequence[str] = DEFAULT_VOCABULARY
) -> GroundTruthSet:
    """
    Parse ``{"images": [{"image_id", "annotations": [{"box"|"bbox", "label"}]}]}``.

    Raises:
        SchemaError: If the document is malformed
        UnknownClass: If a label is not in ``vocabulary``
    """
    if not isinstance(data, dict) or not isinstance(data.get("images"), list):
        raise SchemaError("Ground truth needs an 'images' list", field="images")

    images: Dict[str, Tuple[Annotation, ...]] = {}
    for i, image in enumerate(data["images"]):
        where = f"images[{i}]"
        if not isinstance(image, dict) or "image_id" not in image:
            raise SchemaError("Image entry needs an 'image_id'", field=where)
        image_id = str(image["image_id"])
        if image_id in images:
            raise SchemaError(f"Duplicate image_id '{image_id}'", field=where)
        records = image.get("annotations", [])
        if not isinstance(records, list):
            raise SchemaError("'annotations' must be a list", field=f"{where}.annotations")

        annotations = []
        for j, record in enumerate(records):
            item = f"{where}.annotations[{j}]"
            if not isinstance(record, dict):
                raise SchemaError("Annotation must be an object", field=item)
            box = parse_box(record, item)
            if "label" in record:
                label = canonical_class_name(record["label"])
            elif isinstance(record.get("category_id"), int) and 0 <= record["category_id"] < len(
                vocabulary
            ):
                label = vocabulary[record["category_id"]]
            else:
                raise SchemaError("Annotation needs a 'label' or valid 'category_id'", field=item)
            if label not in vocabulary:
                raise UnknownClass(label)
            annotations.append(Annotation(box=box, label=label))
        images[image_id] = tuple(annotations)

    return GroundTruthSet(images=images)


def read_ground_truth(
    path: Union[str, Path], vocabulary: Sequence[str] = DEFAULT_VOCABULARY
) -> GroundTruthSet:
    gt = parse_ground_truth_document(read_json(path), vocabulary)
    logger.info(f"Loaded {gt.total} ground-truth boxes across {len(gt.images)} images")
    return gt


@dataclass(frozen=True)
class MatchResult:
    """Matches of one image as (pred index, gt index, IoU) plus leftovers."""

    matches: Tuple[Tuple[int, int, float], ...]
    unmatched_preds: Tuple[int, ...]
    unmatched_gts: Tuple[int, ...]

    @property
    def matched_preds(self) -> set:
        return {p for p, _, _ in self.matches}


def _as_sets(preds: PredsLike) -> List[DetectionSet]:
    if isinstance(preds, DetectionSet):
        return [preds]
    return list(preds)


def match_detections(
    preds: DetectionSet,
    gts: Union[GroundTruthSet, Sequence[Annotation]],
    iou_thresh: float = MAP_IOU,
) -> MatchResult:
    """
    Greedy class-aware matching of one image's predictions to ground truth.

    Predictions are visited by descending score (lower index first on ties);
    each takes the highest-IoU unmatched ground truth of its class with
    IoU >= ``iou_thresh``.

    Raises:
        ValueError: If iou_thresh is outside (0, 1]
    """
    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh must lie in (0, 1], got {iou_thresh}")
    annotations = gts.for_image(preds.image_id) if isinstance(gts, GroundTruthSet) else tuple(gts)

    n_pred, n_gt = len(preds), len(annotations)
    ious = pairwise_iou(preds.boxes_array(), boxes_to_array(a.box for a in annotations))
    gt_labels = np.asarray([a.label for a in annotations], dtype=object)
    free = np.ones(n_gt, dtype=bool)

    order = sorted(range(n_pred), key=lambda i: (-preds[i].score, i))
    matches = []
    for i in order:
        if not n_gt:
            break
        candidates = free & (gt_labels == preds[i].label)
        if not candidates.any():
            continue
        masked = np.where(candidates, ious[i], -1.0)
        j = int(np.argmax(masked))
        if masked[j] >= iou_thresh:
            free[j] = False
            matches.append((i, j, float(ious[i, j])))

    matched = {p for p, _, _ in matches}
    return MatchResult(
        matches=tuple(matches),
        unmatched_preds=tuple(i for i in range(n_pred) if i not in matched),
        unmatched_gts=tuple(int(j) for j in np.flatnonzero(free)),
    )


def average_iou_at(preds: PredsLike, gts: GroundTruthSet, t: float) -> float:
    """
    Mean IoU over matched pairs whose IoU is at least ``t``.

    Pairs come from matching at any positive overlap, so raising ``t`` only
    drops pairs. Returns 0.0 when no pair qualifies.
    """
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    kept = [
        value
        for ds in _as_sets(preds)
        for _, _, value in match_detections(ds, gts, ANY_OVERLAP).matches
        if value >= t
    ]
    return float(np.mean(kept)) if kept else 0.0


def interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """101-point interpolated AP from a PR curve ordered by descending score."""
    if not len(recall):
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    inds = np.searchsorted(recall, RECALL_THRESHOLDS, side="left")
    q = np.where(inds < len(envelope), envelope[np.minimum(inds, len(envelope) - 1)], 0.0)
    return float(q.mean())


def per_class_ap(
    preds: PredsLike, gts: GroundTruthSet, iou_thresh: float = MAP_IOU
) -> Dict[str, float]:
    """AP per class that has at least one ground-truth box."""
    npos = gts.class_counts()
    # (score, image order, pred index, is_tp) per class
    scored: Dict[str, List[Tuple[float, int, int, bool]]] = {c: [] for c in npos}
    for k, ds in enumerate(_as_sets(preds)):
        matched = match_detections(ds, gts, iou_thresh).matched_preds
        for i, d in enumerate(ds.detections):
            if d.label in scored:
                scored[d.label].append((d.score, k, i, i in matched))

    result = {}
    for label in sorted(npos):
        entries = sorted(scored[label], key=lambda e: (-e[0], e[1], e[2]))
        tp = np.cumsum([e[3] for e in entries], dtype=np.float64)
        fp = np.cumsum([not e[3] for e in entries], dtype=np.float64)
        recall = tp / npos[label]
        precision = tp / np.maximum(tp + fp, 1.0)
        result[label] = interpolated_ap(recall, precision)
    return result


def mean_average_precision(
    preds: PredsLike, gts: GroundTruthSet, iou_thresh: float = MAP_IOU
) -> float:
    """
    Unweighted mean of per-class AP over classes present in the ground truth.

    Raises:
        ValueError: If the ground truth holds no boxes
    """
    if gts.total == 0:
        raise ValueError("mAP needs at least one ground-truth box")
    aps = per_class_ap(preds, gts, iou_thresh)
    return float(np.mean(list(aps.values())))


def _group_lookup(class_groups: Mapping[str, Iterable[str]]) -> Dict[str, str]:
    lookup: Dict[str, str] = {}
    for group, classes in class_groups.items():
        for c in classes:
            if c in lookup:
                raise ValueError(f"Class '{c}' belongs to groups '{lookup[c]}' and '{group}'")
            lookup[c] = group
    return lookup


def count_false_positives(
    preds: PredsLike,
    gts: GroundTruthSet,
    class_groups: Mapping[str, Iterable[str]] = DEFAULT_CLASS_GROUPS,
) -> Dict[str, int]:
    """
    False positives (unmatched at IoU 0.5) tallied by class group.

    Raises:
        ValueError: If a predicted class belongs to no group, or to several
    """
    lookup = _group_lookup(class_groups)
    counts = {group: 0 for group in class_groups}
    for ds in _as_sets(preds):
        for i in match_detections(ds, gts, FP_IOU).unmatched_preds:
            label = ds[i].label
            if label not in lookup:
                raise ValueError(f"Class '{label}' is not in any class group")
            counts[lookup[label]] += 1
    return counts


def _reduction_percent(before: int, after: int) -> Optional[float]:
    if before <= 0:
        return None
    return 100.0 * (before - after) / before


def fp_reduction_report(
    baseline: Mapping[str, int], refined: Mapping[str, int]
) -> Dict[str, Dict[str, Any]]:
    """Per-group and overall FP reduction, with published values when they exist."""
    report = {}
    rows = [(g, baseline[g], refined.get(g, 0)) for g in baseline]
    rows.append(("overall", sum(baseline.values()), sum(refined.values())))
    for group, before, after in rows:
        report[group] = {
            "baseline": before,
            "refined": after,
            "reduction_percent": _reduction_percent(before, after),
            "published_percent": PUBLISHED_FP_REDUCTION.get((group, before, after)),
        }
    return report


@dataclass(frozen=True)
class BoxReduction:
    baseline: int
    refined: int
    reduction_percent: float
    published_percent: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "baseline": self.baseline,
            "refined": self.refined,
            "reduction_percent": self.reduction_percent,
            "published_percent": self.published_percent,
        }


def box_reduction_report(baseline_count: int, refined_count: int) -> BoxReduction:
    """
    Percentage of boxes removed by refinement.

    Raises:
        InvalidCounts: Unless baseline_count >= refined_count >= 0 and
            baseline_count > 0

    Example:
        >>> r = box_reduction_report(598, 451)
        >>> round(r.reduction_percent, 2), r.published_percent
        (24.58, 37.88)
    """
    if baseline_count <= 0 or refined_count < 0 or refined_count > baseline_count:
        raise InvalidCounts(
            f"Need baseline_count >= refined_count >= 0 and baseline_count > 0, "
            f"got ({baseline_count}, {refined_count})"
        )
    return BoxReduction(
        baseline=baseline_count,
        refined=refined_count,
        reduction_percent=100.0 * (baseline_count - refined_count) / baseline_count,
        published_percent=PUBLISHED_BOX_REDUCTION.get((baseline_count, refined_count)),
    )


@dataclass(frozen=True)
class ConfidenceChanges:
    """
    Score changes between baseline and refined detections.

    Removed detections count as decreased. Percentages are over the total
    number of baseline detections.
    """

    num_increased: int
    num_decreased: int
    num_removed: int
    total: int

    @property
    def pct_increased(self) -> float:
        return 100.0 * self.num_increased / self.total if self.total else 0.0

    @property
    def pct_decreased(self) -> float:
        return 100.0 * self.num_decreased / self.total if self.total else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_increased": self.num_increased,
            "num_decreased": self.num_decreased,
            "num_removed": self.num_removed,
            "total_baseline": self.total,
            "pct_increased": self.pct_increased,
            "pct_decreased": self.pct_decreased,
        }


def confidence_change_report(
    before: Sequence[DetectionSet], after: Sequence[DetectionSet]
) -> ConfidenceChanges:
    """
    Pair refined detections with their baseline by provenance id.

    Raises:
        ProvenanceMismatch: If a refined image or detection id has no
            baseline counterpart
    """
    baseline = {ds.image_id: {d.uid: d.score for d in ds} for ds in before}
    increased = decreased = removed = 0
    seen_images = set()
    for ds in after:
        if ds.image_id not in baseline:
            raise ProvenanceMismatch(f"Refined image '{ds.image_id}' is not in the baseline")
        seen_images.add(ds.image_id)
        scores = baseline[ds.image_id]
        survivors = set()
        for d in ds:
            if d.uid not in scores:
                raise ProvenanceMismatch(
                    f"Detection '{d.uid}' in image '{ds.image_id}' has no baseline counterpart"
                )
            if d.uid in survivors:
                raise ProvenanceMismatch(f"Detection '{d.uid}' appears twice after refinement")
            survivors.add(d.uid)
            if d.score > scores[d.uid]:
                increased += 1
            elif d.score < scores[d.uid]:
                decreased += 1
        removed += len(scores) - len(survivors)

    # images dropped entirely lose all their detections
    removed += sum(len(s) for image_id, s in baseline.items() if image_id not in seen_images)
    total = sum(len(s) for s in baseline.values())
    return ConfidenceChanges(
        num_increased=increased,
        num_decreased=decreased + removed,
        num_removed=removed,
        total=total,
    )


@dataclass(frozen=True)
class MetricSummary:
    map: float
    avg_iou_at: Dict[float, float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "map": self.map,
            "avg_iou_at": {str(t): v for t, v in self.avg_iou_at.items()},
        }


def summarize_metrics(
    preds: Sequence[DetectionSet],
    gts: GroundTruthSet,
    thresholds: Sequence[float] = AVG_IOU_THRESHOLDS,
) -> MetricSummary:
    return MetricSummary(
        map=mean_average_precision(preds, gts),
        avg_iou_at={t: average_iou_at(preds, gts, t) for t in thresholds},
    )


@dataclass(frozen=True)
class EvalReport:
    """Baseline and refined statistics side by side."""

    baseline: MetricSummary
    refined: MetricSummary
    fp_per_class_group: Dict[str, Dict[str, Any]]
    box_counts: BoxReduction
    confidence_changes: ConfidenceChanges
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def map(self) -> float:
        return self.refined.map

    @property
    def avg_iou_at(self) -> Dict[float, float]:
        return self.refined.avg_iou_at

    def to_dict(self) -> Dict[str, Any]:
        report = {
            "metrics": {
                "baseline": self.baseline.to_dict(),
                "refined": self.refined.to_dict(),
            },
            "false_positives": self.fp_per_class_group,
            "box_counts": self.box_counts.to_dict(),
            "confidence_changes": self.confidence_changes.to_dict(),
        }
        report.update(self.details)
        return report

    def render_text(self) -> str:
        """Plain-text tables: metrics, box reduction, FPs, confidence changes."""
        sections = []

        metric_rows = [["mAP", f"{self.baseline.map:.4f}", f"{self.refined.map:.4f}"]]
        for t in self.refined.avg_iou_at:
            metric_rows.append(
                [
                    f"Avg IoU @ {t}",
                    f"{self.baseline.avg_iou_at.get(t, 0.0):.4f}",
                    f"{self.refined.avg_iou_at[t]:.4f}",
                ]
            )
        sections.append(
            "Detection metrics\n" + _table(metric_rows, ["Metric", "Baseline", "Refined"])
        )

        box = self.box_counts
        sections.append(
            "Bounding box reduction\n"
            + _table(
                [
                    [
                        str(box.baseline),
                        str(box.refined),
                        f"{box.reduction_percent:.2f}",
                        _or_dash(box.published_percent),
                    ]
                ],
                ["Baseline", "Refined", "Reduction (%)", "Published (%)"],
                label_column=False,
            )
        )

        fp_rows = [
            [
                group.capitalize(),
                str(row["baseline"]),
                str(row["refined"]),
                _or_dash(row["reduction_percent"]),
                _or_dash(row["published_percent"]),
            ]
            for group, row in self.fp_per_class_group.items()
        ]
        sections.append(
            "False positives\n"
            + _table(fp_rows, ["Group", "Baseline", "Refined", "Reduction (%)", "Published (%)"])
        )

        cc = self.confidence_changes
        sections.append(
            "Confidence changes\n"
            + _table(
                [
                    ["No. of samples", str(cc.num_increased), str(cc.num_decreased)],
                    ["Percentage (%)", f"{cc.pct_increased:.2f}", f"{cc.pct_decreased:.2f}"],
                ],
                ["Metric", "Score up", "Score down"],
            )
        )

        if "layers" in self.details:
            sections.append("Layer order: " + (" -> ".join(self.details["layers"]) or "(none)"))
        return "\n\n".join(sections) + "\n"


def _table(rows: List[List[str]], headers: List[str], label_column: bool = True) -> str:
    # cells arrive formatted; numbers stay right-aligned as written
    first = "left" if label_column else "right"
    colalign = [first] + ["right"] * (len(headers) - 1)
    return tabulate(rows, headers=headers, colalign=colalign, disable_numparse=True)


def _or_dash(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.2f}"


def _box_counts(baseline: Sequence[DetectionSet], refined: Sequence[DetectionSet]) -> BoxReduction:
    before = sum(len(ds) for ds in baseline)
    after = sum(len(ds) for ds in refined)
    if before == 0 and after == 0:
        return BoxReduction(baseline=0, refined=0, reduction_percent=0.0)
    return box_reduction_report(before, after)


def evaluate(
    baseline: Sequence[DetectionSet],
    refined: Sequence[DetectionSet],
    gts: GroundTruthSet,
    class_groups: Mapping[str, Iterable[str]] = DEFAULT_CLASS_GROUPS,
    thresholds: Sequence[float] = AVG_IOU_THRESHOLDS,
    details: Optional[Dict[str, Any]] = None,
) -> EvalReport:
    """
    Build the full side-by-side report.

    Raises:
        ValueError: If the ground truth is empty
        ProvenanceMismatch: If refined detections cannot be traced to the baseline
    """
    logger.info("Starting evaluation...")
    baseline_fp = count_false_positives(baseline, gts, class_groups)
    refined_fp = count_false_positives(refined, gts, class_groups)
    report = EvalReport(
        baseline=summarize_metrics(baseline, gts, thresholds),
        refined=summarize_metrics(refined, gts, thresholds),
        fp_per_class_group=fp_reduction_report(baseline_fp, refined_fp),
        box_counts=_box_counts(baseline, refined),
        confidence_changes=confidence_change_report(baseline, refined),
        details=dict(details or {}),
    )
    logger.info(
        f"Successfully evaluated: mAP {report.baseline.map:.4f} -> {report.refined.map:.4f}"
    )
    return report


__all__ = [
    "MAP_IOU",
    "FP_IOU",
    "AVG_IOU_THRESHOLDS",
    "RECALL_THRESHOLDS",
    "DEFAULT_CLASS_GROUPS",
    "PUBLISHED_BOX_REDUCTION",
    "PUBLISHED_FP_REDUCTION",
    "Annotation",
    "GroundTruthSet",
    "parse_ground_truth_document",
    "read_ground_truth",
    "MatchResult",
    "match_detections",
    "average_iou_at",
    "interpolated_ap",
    "per_class_ap",
    "mean_average_precision",
    "count_false_positives",
    "fp_reduction_report",
    "BoxReduction",
    "box_reduction_report",
    "ConfidenceChanges",
    "confidence_change_report",
    "MetricSummary",
    "summarize_metrics",
    "EvalReport",
    "evaluate",
]
