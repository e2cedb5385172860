"""
Refinement pipeline.

Loads detections and their side inputs, applies the enabled rule layers in
the configured order over the whole dataset, evaluates baseline against
refined detections and writes every output atomically.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .cawal import SceneLabelMap, apply_cawal_bindings, read_scene_maps
from .config import (
    LAYER_CAWAL,
    LAYER_CONTAINMENT,
    LAYER_HWAD,
    LAYER_OVERLAP,
    LAYER_SHAPE_GATE,
    PipelineConfig,
)
from .detections import (
    DEFAULT_VOCABULARY,
    DetectionSet,
    detection_sets_to_document,
    read_detection_file,
)
from .errors import ConfigError
from .evalmetrics import EvalReport, GroundTruthSet, evaluate, read_ground_truth
from .hwad import apply_hwad, run_hwad_cycles
from .knowledge import (
    KnowledgeGraph,
    ShapeKnowledge,
    fetch_knowledge,
    knowledge_graph_to_document,
    load_knowledge_graph,
    load_shape_knowledge,
    parse_knowledge_graph,
    parse_shape_knowledge,
    validate_knowledge_graph,
)
from .llm_client import FixtureKnowledgeClient
from .redundancy import apply_containment_filter, apply_redundancy_filter
from .shapeconf import (
    ShapeCounts,
    ShapeGateConfig,
    apply_shape_gate_set,
    read_shape_counts,
    rekey_shape_counts,
)
from .utils import dumps_json, write_many_atomic

logger = logging.getLogger(__name__)

REFINED_FILENAME = "refined_detections.json"
REPORT_JSON_FILENAME = "report.json"
REPORT_TEXT_FILENAME = "report.txt"
KNOWLEDGE_FILENAME = "knowledge_graph.json"


@dataclass(frozen=True)
class PipelineInputs:
    detections: List[DetectionSet]
    ground_truth: GroundTruthSet
    scenes: Mapping[str, SceneLabelMap] = field(default_factory=dict)
    knowledge: Optional[KnowledgeGraph] = None
    shape_knowledge: Optional[ShapeKnowledge] = None
    shape_counts: Mapping[str, ShapeCounts] = field(default_factory=dict)


@dataclass
class PipelineResult:
    refined: List[DetectionSet]
    knowledge: Optional[KnowledgeGraph]
    report: EvalReport
    written: Dict[str, str] = field(default_factory=dict)


def load_detections(
    path: Union[str, Path], vocabulary: Sequence[str] = DEFAULT_VOCABULARY
) -> List[DetectionSet]:
    """
    Load a detection file into per-image sets with provenance ids.

    Raises:
        FileNotFoundError: If the file doesn't exist
        SchemaError: If a record is malformed (the message names the field)
        UnknownClass: If a label is outside ``vocabulary``
    """
    return read_detection_file(path, vocabulary)


def _bundled_knowledge_graph() -> KnowledgeGraph:
    logger.info("No knowledge graph given, using the bundled size graph")
    return parse_knowledge_graph(fetch_knowledge("size-graph-v1", FixtureKnowledgeClient()))


def _bundled_shape_knowledge() -> ShapeKnowledge:
    logger.info("No shape knowledge given, using the bundled shape table")
    return parse_shape_knowledge(fetch_knowledge("shape-counts-v1", FixtureKnowledgeClient()))


def load_inputs(cfg: PipelineConfig) -> PipelineInputs:
    """
    Read every input file the enabled layers need.

    Raises:
        ConfigError: If a required path is missing from the configuration
    """
    detections_path = cfg.path("detections")
    if detections_path is None:
        raise ConfigError("No detections file configured")
    gt_path = cfg.path("ground_truth")
    if gt_path is None:
        raise ConfigError("No ground-truth file configured")

    detections = load_detections(detections_path, cfg.vocabulary)
    ground_truth = read_ground_truth(gt_path, cfg.vocabulary)

    scenes: Mapping[str, SceneLabelMap] = {}
    if cfg.is_enabled(LAYER_CAWAL):
        scenes_path = cfg.path("scenes")
        if scenes_path is None:
            raise ConfigError("The cawal layer is enabled but no scenes file is configured")
        scenes = read_scene_maps(scenes_path)

    knowledge = None
    if cfg.is_enabled(LAYER_HWAD):
        knowledge_path = cfg.path("knowledge")
        knowledge = (
            load_knowledge_graph(knowledge_path) if knowledge_path else _bundled_knowledge_graph()
        )

    shape_knowledge = None
    shape_counts: Mapping[str, ShapeCounts] = {}
    if cfg.is_enabled(LAYER_SHAPE_GATE):
        counts_path = cfg.path("shape_counts")
        if counts_path is None:
            raise ConfigError(
                "The shape-gate layer is enabled but no shape-counts file is configured"
            )
        sk_path = cfg.path("shape_knowledge")
        shape_knowledge = load_shape_knowledge(sk_path) if sk_path else _bundled_shape_knowledge()
        shape_counts = rekey_shape_counts(read_shape_counts(counts_path), detections)

    return PipelineInputs(
        detections=detections,
        ground_truth=ground_truth,
        scenes=scenes,
        knowledge=knowledge,
        shape_knowledge=shape_knowledge,
        shape_counts=shape_counts,
    )


def _changed_scores(before: Sequence[DetectionSet], after: Sequence[DetectionSet]) -> int:
    changed = 0
    for old, new in zip(before, after):
        scores = {d.uid: d.score for d in old}
        changed += sum(1 for d in new if d.uid in scores and d.score != scores[d.uid])
    return changed


def _count(sets: Sequence[DetectionSet]) -> int:
    return sum(len(ds) for ds in sets)


def _apply_score_floor(ds: DetectionSet, floor: float) -> DetectionSet:
    if all(d.score >= floor for d in ds):
        return ds
    return ds.with_detections(d for d in ds if d.score >= floor)


def refine(
    inputs: PipelineInputs, cfg: PipelineConfig
) -> Tuple[List[DetectionSet], Optional[KnowledgeGraph], Dict[str, Any]]:
    """
    Apply the enabled layers in order, one layer at a time over all images.

    Returns:
        Refined sets, the updated knowledge graph (when HWAD ran, otherwise
        the input graph) and per-layer details for the report
    """
    sets = list(inputs.detections)
    kg = inputs.knowledge
    effects = []
    details: Dict[str, Any] = {"layers": list(cfg.layers)}

    for layer in cfg.layers:
        before = sets
        logger.info(f"Applying layer '{layer}' to {_count(sets)} detections")

        if layer == LAYER_CONTAINMENT:
            sets = [apply_containment_filter(ds) for ds in sets]
        elif layer == LAYER_OVERLAP:
            sets = [apply_redundancy_filter(ds, cfg.rf) for ds in sets]
        elif layer == LAYER_CAWAL:
            refined = []
            for ds in sets:
                scene = inputs.scenes.get(ds.image_id)
                if scene is None:
                    logger.warning(
                        f"No scene map for image '{ds.image_id}', skipping context rules"
                    )
                    refined.append(ds)
                    continue
                refined.append(
                    apply_cawal_bindings(
                        ds, scene, cfg.cawal_bindings, cfg.vocabulary, cfg.cawal_attenuate
                    )
                )
            sets = refined
        elif layer == LAYER_HWAD:
            if kg is None:
                raise ConfigError("The hwad layer needs a knowledge graph")
            kg, traces = run_hwad_cycles(kg, sets, cfg.hwad_alpha, cfg.hwad_cycles)
            details["hwad_trace"] = [[entry.to_dict() for entry in trace] for trace in traces]
            sets = [apply_hwad(ds, kg, cfg.hwad_gamma, cfg.vocabulary) for ds in sets]
        elif layer == LAYER_SHAPE_GATE:
            if inputs.shape_knowledge is None:
                raise ConfigError("The shape-gate layer needs shape knowledge")
            gate = ShapeGateConfig(cfg.shape_alpha, cfg.shape_boost_percent)
            records: List[Dict[str, Any]] = []
            refined = []
            for ds in sets:
                gated, image_records = apply_shape_gate_set(
                    ds, inputs.shape_counts, inputs.shape_knowledge, gate, cfg.vocabulary
                )
                refined.append(gated)
                records.extend({"image_id": ds.image_id, **r} for r in image_records)
            details["shape_gate"] = records
            sets = refined

        effects.append(
            {
                "layer": layer,
                "removed": _count(before) - _count(sets),
                "rescored": _changed_scores(before, sets),
            }
        )

    if cfg.score_floor > 0:
        before_floor = _count(sets)
        sets = [_apply_score_floor(ds, cfg.score_floor) for ds in sets]
        effects.append(
            {"layer": "score-floor", "removed": before_floor - _count(sets), "rescored": 0}
        )

    details["layer_effects"] = effects
    return sets, kg, details


def run_pipeline(cfg: PipelineConfig, out_dir: Optional[Union[str, Path]] = None) -> PipelineResult:
    """
    Run a full refinement and write its outputs.

    Outputs in ``out_dir`` (or the configured ``out`` path):
    refined_detections.json, report.json, report.txt and, when HWAD ran,
    knowledge_graph.json. All files are staged first and renamed together,
    so a failing run leaves earlier outputs untouched.

    Raises:
        ConfigError: If inputs or the output directory are not configured
        PgRulesError: Any layer or evaluation error aborts before writing
    """
    target = Path(out_dir) if out_dir is not None else cfg.path("out")
    if target is None:
        raise ConfigError("No output directory configured")

    logger.info("Starting refinement pipeline...")
    inputs = load_inputs(cfg)
    refined, kg, details = refine(inputs, cfg)
    report = evaluate(
        inputs.detections,
        refined,
        inputs.ground_truth,
        cfg.class_groups,
        details=details,
    )

    documents = {
        target / REFINED_FILENAME: dumps_json(detection_sets_to_document(refined)),
        target / REPORT_JSON_FILENAME: dumps_json(report.to_dict()),
        target / REPORT_TEXT_FILENAME: report.render_text(),
    }
    if kg is not None and cfg.is_enabled(LAYER_HWAD):
        validate_knowledge_graph(kg)
        documents[target / KNOWLEDGE_FILENAME] = dumps_json(knowledge_graph_to_document(kg))

    written = write_many_atomic(documents)
    logger.info(
        f"Successfully refined {_count(inputs.detections)} -> {_count(refined)} detections; "
        f"outputs in {target}"
    )
    return PipelineResult(refined=refined, knowledge=kg, report=report, written=written)


__all__ = [
    "REFINED_FILENAME",
    "REPORT_JSON_FILENAME",
    "REPORT_TEXT_FILENAME",
    "KNOWLEDGE_FILENAME",
    "PipelineInputs",
    "PipelineResult",
    "load_detections",
    "load_inputs",
    "refine",
    "run_pipeline",
]
