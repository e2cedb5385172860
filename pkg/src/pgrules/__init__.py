"""
pgrules - physics-guided refinement of object-detection outputs.

This package provides tools to:
- Remove redundant boxes (containment and overlap rules)
- Re-weight detections by scene context (CAWAL)
- Check pairwise size relations against a weighted knowledge graph (HWAD)
- Gate detections on the basic shapes found inside them
- Evaluate baseline against refined detections (mAP, Avg IoU, FP counts)

Main components:
- Geometry and detection-file utilities
- Rule layers and the pipeline that sequences them
- Knowledge documents with an offline fixture store and a live LLM client
- Synthetic scenarios and brute-force oracles for testing
"""

__version__ = "0.3.0"
__author__ = "Matteo Subet"
__email__ = "matteo.subet@supsi.ch"

# Import main components
from .cawal import (
    ContextBinding,
    SceneLabelMap,
    apply_cawal,
    binding_fires,
    context_fraction,
    read_scene_maps,
)
from .config import PipelineConfig, load_config
from .detections import (
    DEFAULT_VOCABULARY,
    Detection,
    DetectionSet,
    read_detection_file,
    save_detections,
)
from .errors import (
    ConfigError,
    KnowledgeClientError,
    PgRulesError,
    SchemaError,
    UnknownClass,
)
from .evalmetrics import (
    Annotation,
    EvalReport,
    GroundTruthSet,
    average_iou_at,
    box_reduction_report,
    confidence_change_report,
    count_false_positives,
    evaluate,
    mean_average_precision,
)
from .geometry import Box, area, is_contained, iou, overlap_fraction
from .hwad import apply_hwad, blend_weight, posterior_update, run_hwad_update_cycle
from .knowledge import (
    KnowledgeGraph,
    ShapeKnowledge,
    SizeRule,
    fetch_knowledge,
    parse_knowledge_graph,
    parse_shape_knowledge,
    persist_knowledge_graph,
    validate_knowledge_graph,
)
from .llm_client import FixtureKnowledgeClient, LiveKnowledgeClient
from .pipeline import load_detections, refine, run_pipeline
from .redundancy import apply_containment_filter, apply_redundancy_filter
from .shapeconf import ShapeCounts, apply_shape_gate, shape_confidence
from .testkit import (
    ScenarioSpec,
    gen_scenario,
    oracle_ap,
    oracle_overlap_raster,
    oracle_redundancy,
)

# Package metadata
__all__ = [
    "__version__",
    "__author__",
    "__email__",
    # Geometry
    "Box",
    "area",
    "iou",
    "is_contained",
    "overlap_fraction",
    # Detections
    "DEFAULT_VOCABULARY",
    "Detection",
    "DetectionSet",
    "read_detection_file",
    "save_detections",
    # Redundancy
    "apply_containment_filter",
    "apply_redundancy_filter",
    # Knowledge
    "SizeRule",
    "KnowledgeGraph",
    "ShapeKnowledge",
    "parse_knowledge_graph",
    "parse_shape_knowledge",
    "validate_knowledge_graph",
    "persist_knowledge_graph",
    "fetch_knowledge",
    "FixtureKnowledgeClient",
    "LiveKnowledgeClient",
    # Context (CAWAL)
    "SceneLabelMap",
    "ContextBinding",
    "context_fraction",
    "binding_fires",
    "apply_cawal",
    "read_scene_maps",
    # Size relations (HWAD)
    "posterior_update",
    "blend_weight",
    "run_hwad_update_cycle",
    "apply_hwad",
    # Shape gate
    "ShapeCounts",
    "shape_confidence",
    "apply_shape_gate",
    # Evaluation
    "Annotation",
    "GroundTruthSet",
    "EvalReport",
    "average_iou_at",
    "mean_average_precision",
    "count_false_positives",
    "box_reduction_report",
    "confidence_change_report",
    "evaluate",
    # Pipeline
    "PipelineConfig",
    "load_config",
    "load_detections",
    "refine",
    "run_pipeline",
    # Testing support
    "ScenarioSpec",
    "gen_scenario",
    "oracle_redundancy",
    "oracle_overlap_raster",
    "oracle_ap",
    # Errors
    "PgRulesError",
    "SchemaError",
    "UnknownClass",
    "ConfigError",
    "KnowledgeClientError",
]
