"""
Synthetic scenarios and brute-force oracles.

``gen_scenario`` builds a seeded dataset of water and land images with
known ground truth, planted redundant boxes (small same-class boxes nested
in a true detection) and planted context false positives (road vehicles on
water, boats on land). The manifest records what was planted and the false
positive counts the scenario configuration is expected to leave behind.

The oracles restate the geometry and AP definitions as naive loops so
their failure modes differ from the vectorised production code.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Set, Tuple, Union

import numpy as np

from .cawal import SceneLabelMap, scene_maps_to_document
from .config import (
    DEFAULT_LAYERS,
    LAND_CLASSES,
    PipelineConfig,
    default_bindings,
    dump_config,
)
from .detections import (
    DEFAULT_VOCABULARY,
    Detection,
    DetectionSet,
    detection_sets_to_document,
    sigmoid,
)
from .errors import ZeroAreaBox
from .evalmetrics import (
    DEFAULT_CLASS_GROUPS,
    MAP_IOU,
    RECALL_THRESHOLDS,
    Annotation,
    GroundTruthSet,
)
from .geometry import Box
from .knowledge import (
    ShapeKnowledge,
    fetch_knowledge,
    knowledge_graph_to_document,
    parse_knowledge_graph,
    parse_shape_knowledge,
    shape_knowledge_to_document,
)
from .llm_client import FixtureKnowledgeClient
from .shapeconf import ShapeCounts, shape_counts_to_document
from .utils import dumps_json, write_many_atomic

logger = logging.getLogger(__name__)

SCENE_LEGEND = {"0": "background", "1": "water", "2": "land"}
SCENE_IDS = {"background": 0, "water": 1, "land": 2}
SCENE_GRID = 10

# Planted context false positives start at this own-class logit. Attenuated
# by 60% they fall below SCENARIO_SCORE_FLOOR even after the strongest HWAD
# boost, and without attenuation they stay above it after the strongest cut.
CONTEXT_FP_LOGIT = 0.26
SCENARIO_ADJUST_PERCENT = 60.0
SCENARIO_SCORE_FLOOR = 0.54

DEFAULT_SIZE_PROFILES: Dict[str, Tuple[int, int]] = {
    "bicycle": (20, 40),
    "motorcycle": (30, 50),
    "car": (50, 80),
    "truck": (80, 105),
    "bus": (100, 120),
    "boat": (60, 110),
}


@dataclass(frozen=True)
class ScenarioSpec:
    """
    Knobs of a synthetic scenario; the seed fully determines the output.

    ``context_mix`` is the share of scene-grid cells labelled with the
    image's context (water or land); the rest is background.
    """

    seed: int = 0
    n_images: int = 6
    boxes_per_image: Tuple[int, int] = (2, 4)
    nesting_probability: float = 0.5
    context_fp_probability: float = 0.5
    water_fraction: float = 0.5
    context_mix: float = 0.5
    image_size: int = 640
    cell_size: int = 128
    size_profiles: Mapping[str, Tuple[int, int]] = field(
        default_factory=lambda: dict(DEFAULT_SIZE_PROFILES)
    )

    def __post_init__(self):
        lo, hi = self.boxes_per_image
        cells = (self.image_size // self.cell_size) ** 2
        if self.n_images < 1:
            raise ValueError(f"n_images must be >= 1, got {self.n_images}")
        if not 1 <= lo <= hi:
            raise ValueError(
                f"boxes_per_image must satisfy 1 <= lo <= hi, got {self.boxes_per_image}"
            )
        if hi + 1 > cells:
            raise ValueError(f"{hi} boxes plus one false positive do not fit in {cells} cells")
        probabilities = (
            "nesting_probability",
            "context_fp_probability",
            "water_fraction",
            "context_mix",
        )
        for name in probabilities:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        for label, (smin, smax) in self.size_profiles.items():
            if not 2 <= smin <= smax <= self.cell_size:
                raise ValueError(
                    f"Size profile for '{label}' must fit in a {self.cell_size}px cell"
                )


@dataclass
class Scenario:
    detections: List[DetectionSet]
    ground_truth: GroundTruthSet
    scenes: Dict[str, SceneLabelMap]
    shape_counts: Dict[str, Dict[int, ShapeCounts]]
    manifest: Dict[str, Any]


def _bundled_shape_knowledge() -> ShapeKnowledge:
    return parse_shape_knowledge(fetch_knowledge("shape-counts-v1", FixtureKnowledgeClient()))


def _logit_row(
    rng: np.random.Generator, own: int, own_logit: float, size: int
) -> Tuple[float, ...]:
    row = [round(float(rng.uniform(-3.0, -1.0)), 4) for _ in range(size)]
    row[own] = round(own_logit, 4)
    return tuple(row)


def _box_in_cell(
    rng: np.random.Generator,
    cell: int,
    cell_size: int,
    grid: int,
    side: Tuple[int, int],
) -> Box:
    row, col = divmod(cell, grid)
    w = int(rng.integers(side[0], side[1] + 1))
    h = int(rng.integers(side[0], side[1] + 1))
    x = col * cell_size + int(rng.integers(0, cell_size - w + 1))
    y = row * cell_size + int(rng.integers(0, cell_size - h + 1))
    return Box(x, y, x + w, y + h)


def _nested_box(rng: np.random.Generator, parent: Box) -> Box:
    w = max(1, int(parent.width) // 2)
    h = max(1, int(parent.height) // 2)
    x = int(parent.x1) + int(rng.integers(0, int(parent.width) - w + 1))
    y = int(parent.y1) + int(rng.integers(0, int(parent.height) - h + 1))
    return Box(x, y, x + w, y + h)


def _matching_counts(sk: ShapeKnowledge, label: str) -> ShapeCounts:
    return ShapeCounts({shape: lo for shape, (lo, _) in sk.ranges(label).items()})


def _mismatching_counts(sk: ShapeKnowledge, label: str) -> ShapeCounts:
    counts = {shape: lo for shape, (lo, _) in sk.ranges(label).items()}
    counts["rectangle"] = sk.ranges(label)["rectangle"][1] + 2
    return ShapeCounts(counts)


def _group_of(label: str) -> str:
    for group, classes in DEFAULT_CLASS_GROUPS.items():
        if label in classes:
            return group
    raise ValueError(f"Class '{label}' is not in any class group")


def gen_scenario(spec: ScenarioSpec = ScenarioSpec()) -> Scenario:
    """
    Generate a deterministic synthetic scenario.

    Every true detection coincides with its ground-truth box. Planted
    children are nested in a true detection of the same class with a lower
    score; planted context false positives sit in an empty cell with a
    weak own-class logit.
    """
    rng = np.random.default_rng(spec.seed)
    vocabulary = DEFAULT_VOCABULARY
    sk = _bundled_shape_knowledge()
    grid = spec.image_size // spec.cell_size

    sets: List[DetectionSet] = []
    gt_images: Dict[str, Tuple[Annotation, ...]] = {}
    scenes: Dict[str, SceneLabelMap] = {}
    shape_counts: Dict[str, Dict[int, ShapeCounts]] = {}
    image_entries = []
    context_cells = round(spec.context_mix * SCENE_GRID * SCENE_GRID)
    fires = context_cells / (SCENE_GRID * SCENE_GRID) > default_bindings()[0].threshold

    baseline_fp = {group: 0 for group in DEFAULT_CLASS_GROUPS}
    refined_fp = {group: 0 for group in DEFAULT_CLASS_GROUPS}

    for k in range(spec.n_images):
        image_id = f"img-{k:03d}"
        context = "water" if rng.random() < spec.water_fraction else "land"
        true_classes = ("boat",) if context == "water" else LAND_CLASSES
        fp_classes = LAND_CLASSES if context == "water" else ("boat",)

        n_true = int(rng.integers(spec.boxes_per_image[0], spec.boxes_per_image[1] + 1))
        cells = rng.permutation(grid * grid)

        # (label, box, own logit, kind)
        planted: List[Tuple[str, Box, float, str]] = []
        annotations = []
        for c in cells[:n_true]:
            label = true_classes[int(rng.integers(0, len(true_classes)))]
            box = _box_in_cell(rng, int(c), spec.cell_size, grid, spec.size_profiles[label])
            own_logit = float(rng.uniform(1.5, 3.0))
            planted.append((label, box, own_logit, "true"))
            annotations.append(Annotation(box=box, label=label))
            if rng.random() < spec.nesting_probability:
                planted.append((label, _nested_box(rng, box), own_logit - 0.5, "child"))

        if rng.random() < spec.context_fp_probability:
            label = fp_classes[int(rng.integers(0, len(fp_classes)))]
            side = spec.size_profiles[label]
            box = _box_in_cell(rng, int(cells[n_true]), spec.cell_size, grid, side)
            planted.append((label, box, CONTEXT_FP_LOGIT, "context_fp"))

        order = rng.permutation(len(planted))
        detections = []
        counts: Dict[int, ShapeCounts] = {}
        children = fps = 0
        for j, p in enumerate(order):
            label, box, own_logit, kind = planted[int(p)]
            logits = _logit_row(rng, vocabulary.index(label), own_logit, len(vocabulary))
            detections.append(
                Detection(
                    uid=f"{image_id}-d{j}",
                    box=box,
                    label=label,
                    score=round(sigmoid(logits[vocabulary.index(label)]), 6),
                    logits=logits,
                )
            )
            if label in sk:
                if kind == "context_fp":
                    counts[j] = _mismatching_counts(sk, label)
                else:
                    counts[j] = _matching_counts(sk, label)
            if kind == "child":
                children += 1
                baseline_fp[_group_of(label)] += 1
            elif kind == "context_fp":
                fps += 1
                baseline_fp[_group_of(label)] += 1
                if not fires:
                    refined_fp[_group_of(label)] += 1

        sets.append(DetectionSet(image_id=image_id, detections=tuple(detections)))
        gt_images[image_id] = tuple(annotations)
        if counts:
            shape_counts[image_id] = counts

        flat = np.full(SCENE_GRID * SCENE_GRID, SCENE_IDS["background"], dtype=int)
        flat[rng.permutation(SCENE_GRID * SCENE_GRID)[:context_cells]] = SCENE_IDS[context]
        scenes[image_id] = SceneLabelMap.from_grid(
            image_id, SCENE_LEGEND, flat.reshape(SCENE_GRID, SCENE_GRID).tolist()
        )

        image_entries.append(
            {
                "image_id": image_id,
                "context": context,
                "context_cells": context_cells,
                "context_fraction": context_cells / (SCENE_GRID * SCENE_GRID),
                "true_detections": n_true,
                "redundant_children": children,
                "context_fps": fps,
            }
        )

    manifest = {
        "seed": spec.seed,
        "n_images": spec.n_images,
        "images": image_entries,
        "planted": {
            "redundant_pairs": sum(e["redundant_children"] for e in image_entries),
            "context_fps": sum(e["context_fps"] for e in image_entries),
        },
        "expected_fp": {"baseline": baseline_fp, "refined": refined_fp},
    }
    logger.info(
        f"Generated {spec.n_images} images with {manifest['planted']['redundant_pairs']} "
        f"redundant pairs and {manifest['planted']['context_fps']} context false positives"
    )
    return Scenario(
        detections=sets,
        ground_truth=GroundTruthSet(images=gt_images),
        scenes=scenes,
        shape_counts=shape_counts,
        manifest=manifest,
    )


def scenario_config(seed: int = 0) -> PipelineConfig:
    """Configuration under which the manifest's expected refined FPs hold."""
    bindings = tuple(
        replace(b, adjust_percent=SCENARIO_ADJUST_PERCENT) for b in default_bindings()
    )
    return PipelineConfig(
        layers=DEFAULT_LAYERS,
        cawal_bindings=bindings,
        cawal_attenuate=True,
        score_floor=SCENARIO_SCORE_FLOOR,
        seed=seed,
    )


def write_scenario(scenario: Scenario, out_dir: Union[str, Path], seed: int = 0) -> Dict[str, str]:
    """
    Write a scenario and a ready-to-run config.yaml into ``out_dir``.

    Returns:
        Mapping of written file names to paths
    """
    target = Path(out_dir)
    kg = parse_knowledge_graph(fetch_knowledge("size-graph-v1", FixtureKnowledgeClient()))
    sk = _bundled_shape_knowledge()
    cfg = scenario_config(seed).with_paths(
        detections="detections.json",
        ground_truth="ground_truth.json",
        scenes="scenes.json",
        knowledge="knowledge_graph.json",
        shape_knowledge="shape_knowledge.json",
        shape_counts="shape_counts.json",
        out="refined",
    )
    documents = {
        target / "detections.json": dumps_json(detection_sets_to_document(scenario.detections)),
        target / "ground_truth.json": dumps_json(scenario.ground_truth.to_dict()),
        target / "scenes.json": dumps_json(scene_maps_to_document(scenario.scenes.values())),
        target / "shape_counts.json": dumps_json(shape_counts_to_document(scenario.shape_counts)),
        target / "knowledge_graph.json": dumps_json(knowledge_graph_to_document(kg)),
        target / "shape_knowledge.json": dumps_json(shape_knowledge_to_document(sk)),
        target / "config.yaml": dump_config(cfg),
        target / "manifest.json": dumps_json(scenario.manifest),
    }
    written = write_many_atomic(documents)
    logger.info(f"Wrote {len(written)} scenario files to {target}")
    return written


def oracle_redundancy(ds: DetectionSet, rf: float) -> Set[int]:
    """
    Surviving indices under containment-or-overlap redundancy, by brute force.

    Raises:
        ZeroAreaBox: If a zero-area box has a same-class peer
    """
    dets = list(ds)

    def redundant(i: int, j: int) -> bool:
        a, b = dets[i].box, dets[j].box
        if a.x1 >= b.x1 and a.y1 >= b.y1 and a.x2 <= b.x2 and a.y2 <= b.y2:
            contained = True
        else:
            contained = False
        area_a = (a.x2 - a.x1) * (a.y2 - a.y1)
        if area_a <= 0:
            raise ZeroAreaBox("zero-area box")
        w = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
        h = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
        return contained or (w * h) / area_a >= rf

    def outranks(j: int, i: int) -> bool:
        return dets[j].score > dets[i].score or (dets[j].score == dets[i].score and j < i)

    flagged = set()
    for i in range(len(dets)):
        for j in range(len(dets)):
            if i == j or dets[i].label != dets[j].label:
                continue
            if redundant(i, j) and (not redundant(j, i) or outranks(j, i)):
                flagged.add(i)
    return set(range(len(dets))) - flagged


def oracle_overlap_raster(a: Box, b: Box, resolution: float = 1.0) -> float:
    """
    Overlap fraction of ``a`` covered by ``b`` by counting raster cells.

    A cell counts as inside a box when its centre is. Exact for integer
    boxes at unit resolution.
    """
    xs = np.arange(math.floor(a.x1), math.ceil(a.x2), resolution) + resolution / 2
    ys = np.arange(math.floor(a.y1), math.ceil(a.y2), resolution) + resolution / 2
    cx, cy = np.meshgrid(xs, ys)
    in_a = (cx > a.x1) & (cx < a.x2) & (cy > a.y1) & (cy < a.y2)
    in_b = (cx > b.x1) & (cx < b.x2) & (cy > b.y1) & (cy < b.y2)
    total = int(in_a.sum())
    if total == 0:
        raise ZeroAreaBox("zero-area box")
    return int((in_a & in_b).sum()) / total


def _exact_iou(a: Box, b: Box) -> Fraction:
    ax1, ay1, ax2, ay2 = (Fraction(v) for v in a.to_list())
    bx1, by1, bx2, by2 = (Fraction(v) for v in b.to_list())
    w = max(Fraction(0), min(ax2, bx2) - max(ax1, bx1))
    h = max(Fraction(0), min(ay2, by2) - max(ay1, by1))
    inter = w * h
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0 else Fraction(0)


def _oracle_true_positives(ds: DetectionSet, annotations: Sequence[Annotation]) -> List[bool]:
    taken = [False] * len(annotations)
    is_tp = [False] * len(ds)
    visited = sorted(range(len(ds)), key=lambda i: (-ds[i].score, i))
    threshold = Fraction(MAP_IOU)
    for i in visited:
        best, best_iou = None, None
        for j, gt in enumerate(annotations):
            if taken[j] or gt.label != ds[i].label:
                continue
            value = _exact_iou(ds[i].box, gt.box)
            if value >= threshold and (best_iou is None or value > best_iou):
                best, best_iou = j, value
        if best is not None:
            taken[best] = True
            is_tp[i] = True
    return is_tp


def oracle_ap(preds: Sequence[DetectionSet], gts: GroundTruthSet) -> float:
    """
    mAP at IoU 0.5 by enumerating every point of each class's PR staircase.

    Returns 0.0 when the ground truth is empty.
    """
    npos: Dict[str, int] = {}
    for annotations in gts.images.values():
        for a in annotations:
            npos[a.label] = npos.get(a.label, 0) + 1
    if not npos:
        return 0.0

    ranked: Dict[str, List[Tuple[float, int, int, bool]]] = {label: [] for label in npos}
    for k, ds in enumerate(preds):
        flags = _oracle_true_positives(ds, gts.for_image(ds.image_id))
        for i, d in enumerate(ds):
            if d.label in ranked:
                ranked[d.label].append((d.score, k, i, flags[i]))

    aps = []
    for label in sorted(npos):
        entries = sorted(ranked[label], key=lambda e: (-e[0], e[1], e[2]))
        points = []
        for cut in range(1, len(entries) + 1):
            tp = float(sum(1 for e in entries[:cut] if e[3]))
            points.append((tp / npos[label], tp / float(cut)))
        total = 0.0
        for r in RECALL_THRESHOLDS:
            reachable = [p for rec, p in points if rec >= r]
            total += max(reachable) if reachable else 0.0
        aps.append(total / len(RECALL_THRESHOLDS))
    return sum(aps) / len(aps)


__all__ = [
    "SCENE_LEGEND",
    "CONTEXT_FP_LOGIT",
    "SCENARIO_ADJUST_PERCENT",
    "SCENARIO_SCORE_FLOOR",
    "DEFAULT_SIZE_PROFILES",
    "ScenarioSpec",
    "Scenario",
    "gen_scenario",
    "scenario_config",
    "write_scenario",
    "oracle_redundancy",
    "oracle_overlap_raster",
    "oracle_ap",
]
