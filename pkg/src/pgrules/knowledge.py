"""
LLM-generated knowledge documents.

Two documents drive the rule layers:

- the size-relation knowledge graph: classes plus weighted
  ``isSmallerThan`` / ``isBiggerThan`` rules, read and rewritten by HWAD;
- the shape knowledge table: expected counts of basic shapes per class as
  seen from above, read by the shape gate.

Both are parsed and validated here, persisted atomically, and can be
fetched through a knowledge client (see llm_client.py).
"""

import graphlib
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .detections import canonical_class_name
from .errors import (
    ConflictingRelation,
    KnowledgeWriteError,
    NegativeCount,
    SchemaError,
    UnknownClass,
    ValidationError,
    WeightOutOfRange,
)
from .utils import dumps_json, extract_json_text, loads_json, write_text_atomic

logger = logging.getLogger(__name__)

IS_SMALLER = "isSmallerThan"
IS_BIGGER = "isBiggerThan"
RELATIONS = (IS_SMALLER, IS_BIGGER)

SHAPES = ("square", "triangle", "rectangle", "parallelogram", "trapezoid")

CountRange = Tuple[int, int]


@dataclass(frozen=True)
class SizeRule:
    """A weighted size relation between two classes."""

    subject: str
    relation: str
    object: str
    weight: float
    initial_llm_weight: float

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.subject, self.relation, self.object)

    def smaller_edge(self) -> Tuple[str, str]:
        """The (smaller, bigger) pair this rule asserts."""
        if self.relation == IS_SMALLER:
            return (self.subject, self.object)
        return (self.object, self.subject)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subject": self.subject,
            "relation": self.relation,
            "object": self.object,
            "weight": self.weight,
            "initial_llm_weight": self.initial_llm_weight,
        }


@dataclass(frozen=True)
class KnowledgeGraph:
    """
    Classes and size rules.

    ``index_to_class`` and ``class_to_index`` map label indices to class
    names and back, in the order the classes were declared.
    """

    classes: Tuple[str, ...]
    rules: Tuple[SizeRule, ...] = ()
    index_to_class: Dict[int, str] = field(
        default_factory=dict, compare=False, repr=False
    )
    class_to_index: Dict[str, int] = field(
        default_factory=dict, compare=False, repr=False
    )

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "index_to_class", dict(enumerate(self.classes)))
        object.__setattr__(
            self, "class_to_index", {c: i for i, c in enumerate(self.classes)}
        )

    def rules_for_subject(self, subject: str) -> List[SizeRule]:
        return [r for r in self.rules if r.subject == subject]

    def with_rules(self, rules: Sequence[SizeRule]) -> "KnowledgeGraph":
        return KnowledgeGraph(classes=self.classes, rules=tuple(rules))


@dataclass(frozen=True)
class ShapeKnowledge:
    """Expected shape-count ranges per class."""

    table: Mapping[str, Mapping[str, CountRange]]

    def __contains__(self, class_name: str) -> bool:
        return class_name in self.table

    @property
    def classes(self) -> List[str]:
        return list(self.table)

    def ranges(self, class_name: str) -> Dict[str, CountRange]:
        """
        Full shape vocabulary ranges for a class; omitted shapes are [0, 0].

        Raises:
            UnknownClass: If the class has no row in the table
        """
        if class_name not in self.table:
            raise UnknownClass(class_name, where="shape knowledge")
        row = self.table[class_name]
        return {shape: tuple(row.get(shape, (0, 0))) for shape in SHAPES}  # type: ignore[misc]


def _as_weight(value: Any, where: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise SchemaError("Weight must be a number", field=where)
    weight = float(value)
    if not 0.0 <= weight <= 1.0:
        raise WeightOutOfRange(f"Weight {weight} at '{where}' is outside [0, 1]")
    return weight


def _rule_from_record(record: Any, where: str, subject: Optional[str] = None) -> SizeRule:
    if not isinstance(record, dict):
        raise SchemaError("Rule must be an object", field=where)

    try:
        if subject is None:
            subject = canonical_class_name(record.get("subject", record.get("source")))
        obj = canonical_class_name(record.get("object", record.get("target")))
    except SchemaError as e:
        raise SchemaError(str(e), field=where) from e

    relation = record.get("relation")
    if relation not in RELATIONS:
        raise SchemaError(
            f"Relation must be one of {list(RELATIONS)}, got {relation!r}",
            field=f"{where}.relation",
        )

    if "weight" not in record:
        raise SchemaError("Missing required key 'weight'", field=f"{where}.weight")
    weight = _as_weight(record["weight"], f"{where}.weight")
    initial = _as_weight(
        record.get("initial_llm_weight", record["weight"]), f"{where}.initial_llm_weight"
    )
    return SizeRule(
        subject=subject,
        relation=relation,
        object=obj,
        weight=weight,
        initial_llm_weight=initial,
    )


def _graph_from_nodes(data: Dict) -> KnowledgeGraph:
    """Convert the LLM's nodes/edges layout to a KnowledgeGraph."""
    nodes = data["nodes"]
    if not isinstance(nodes, list):
        raise SchemaError("'nodes' must be a list", field="nodes")

    classes: List[str] = []
    rules: List[SizeRule] = []
    for i, node in enumerate(nodes):
        where = f"nodes[{i}]"
        if isinstance(node, str):
            classes.append(canonical_class_name(node))
            continue
        if not isinstance(node, dict):
            raise SchemaError("Node must be an object or a name", field=where)
        name = canonical_class_name(node.get("name", node.get("id")))
        classes.append(name)
        for j, edge in enumerate(node.get("edges", [])):
            rules.append(_rule_from_record(edge, f"{where}.edges[{j}]", subject=name))

    for j, edge in enumerate(data.get("edges", [])):
        rules.append(_rule_from_record(edge, f"edges[{j}]"))

    return KnowledgeGraph(classes=tuple(classes), rules=tuple(rules))


def validate_knowledge_graph(kg: KnowledgeGraph) -> KnowledgeGraph:
    """
    Check every knowledge graph invariant.

    Raises:
        SchemaError: Duplicate classes/rules or a rule relating a class to itself
        WeightOutOfRange: A weight outside [0, 1]
        UnknownClass: A rule endpoint not declared in ``classes``
        ConflictingRelation: Both relations asserted for one pair, or a cycle
            in the derived smaller-than order
    """
    if len(set(kg.classes)) != len(kg.classes):
        raise SchemaError("Duplicate class names", field="classes")

    declared = set(kg.classes)
    seen = set()
    for i, rule in enumerate(kg.rules):
        where = f"rules[{i}]"
        _as_weight(rule.weight, f"{where}.weight")
        _as_weight(rule.initial_llm_weight, f"{where}.initial_llm_weight")
        if rule.relation not in RELATIONS:
            raise SchemaError(f"Unknown relation {rule.relation!r}", field=where)
        for endpoint in (rule.subject, rule.object):
            if endpoint not in declared:
                raise UnknownClass(endpoint, where="knowledge graph classes")
        if rule.subject == rule.object:
            raise SchemaError(
                f"Rule relates '{rule.subject}' to itself", field=where
            )
        if rule.key in seen:
            raise SchemaError(f"Duplicate rule {rule.key}", field=where)
        seen.add(rule.key)

        opposite = IS_BIGGER if rule.relation == IS_SMALLER else IS_SMALLER
        if (rule.subject, opposite, rule.object) in seen:
            raise ConflictingRelation(
                f"'{rule.subject}' is declared both {IS_SMALLER} and {IS_BIGGER} "
                f"'{rule.object}'"
            )

    # smaller -> set of bigger classes; a cycle makes the size order contradictory
    order: Dict[str, set] = {c: set() for c in kg.classes}
    for rule in kg.rules:
        smaller, bigger = rule.smaller_edge()
        order[bigger].add(smaller)
    try:
        tuple(graphlib.TopologicalSorter(order).static_order())
    except graphlib.CycleError as e:
        cycle = " < ".join(e.args[1]) if len(e.args) > 1 else "?"
        raise ConflictingRelation(f"Size relations form a cycle: {cycle}") from e

    return kg


def parse_knowledge_graph(document: str) -> KnowledgeGraph:
    """
    Parse and validate a knowledge-graph document.

    The canonical layout is ``{"classes": [...], "rules": [{"subject",
    "relation", "object", "weight", "initial_llm_weight"}]}``. The LLM's
    nodes/edges layout is accepted too; a missing ``initial_llm_weight``
    defaults to the weight.

    Args:
        document: JSON text

    Returns:
        Validated KnowledgeGraph

    Raises:
        SchemaError, WeightOutOfRange, UnknownClass, ConflictingRelation

    Example:
        >>> kg = parse_knowledge_graph(
        ...     '{"classes": ["Car", "Bus"], "rules": [{"subject": "Car", '
        ...     '"relation": "isSmallerThan", "object": "Bus", "weight": 0.9}]}'
        ... )
        >>> len(kg.rules), kg.rules[0].initial_llm_weight
        (1, 0.9)
    """
    data = loads_json(document, source="knowledge graph")
    if not isinstance(data, dict):
        raise SchemaError("Knowledge graph must be a JSON object")

    if "nodes" in data:
        kg = _graph_from_nodes(data)
    else:
        if "classes" not in data:
            raise SchemaError("Missing required key 'classes'", field="classes")
        raw_classes = data["classes"]
        if not isinstance(raw_classes, list):
            raise SchemaError("'classes' must be a list", field="classes")
        classes = tuple(canonical_class_name(c) for c in raw_classes)

        raw_rules = data.get("rules", [])
        if not isinstance(raw_rules, list):
            raise SchemaError("'rules' must be a list", field="rules")
        rules = tuple(
            _rule_from_record(r, f"rules[{i}]") for i, r in enumerate(raw_rules)
        )
        kg = KnowledgeGraph(classes=classes, rules=rules)

    return validate_knowledge_graph(kg)


def knowledge_graph_to_document(kg: KnowledgeGraph) -> Dict[str, Any]:
    return {
        "classes": list(kg.classes),
        "rules": [rule.to_dict() for rule in kg.rules],
    }


def persist_knowledge_graph(kg: KnowledgeGraph, destination: Union[str, Path]) -> str:
    """
    Validate a knowledge graph and save it atomically in canonical form.

    Args:
        kg: Graph to persist
        destination: Output file path

    Returns:
        Path to the saved file

    Raises:
        WeightOutOfRange (and the other validation errors): Before anything
            is written
        KnowledgeWriteError: If the file cannot be written
    """
    validate_knowledge_graph(kg)
    text = dumps_json(knowledge_graph_to_document(kg))
    try:
        path = write_text_atomic(text, destination)
    except OSError as e:
        raise KnowledgeWriteError(
            f"Could not write knowledge graph to {destination}: {e}"
        ) from e
    logger.info(f"Saved knowledge graph with {len(kg.rules)} rules to {path}")
    return path


def _as_count_range(value: Any, where: str) -> CountRange:
    if isinstance(value, bool):
        raise SchemaError("Count must be an integer or a range", field=where)
    if isinstance(value, int):
        lo = hi = value
    elif isinstance(value, str) and value.strip():
        parts = [p.strip() for p in value.split("-")]
        if len(parts) not in (1, 2) or not all(p.isdigit() for p in parts):
            raise SchemaError(f"Cannot read count range {value!r}", field=where)
        lo, hi = int(parts[0]), int(parts[-1])
    elif (
        isinstance(value, list)
        and len(value) == 2
        and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        lo, hi = value
    else:
        raise SchemaError("Count must be an integer or a [lo, hi] pair", field=where)

    if lo < 0 or hi < 0:
        raise NegativeCount(f"Negative shape count at '{where}': {value!r}")
    if lo > hi:
        raise SchemaError(f"Range lower bound exceeds upper bound: {value!r}", field=where)
    return (lo, hi)


def parse_shape_knowledge(document: str) -> ShapeKnowledge:
    """
    Parse the per-class shape count table.

    Ranges may be ``[lo, hi]`` pairs, scalars (``k`` becomes ``[k, k]``) or
    strings such as ``"0-1"``.

    Raises:
        SchemaError: If the document is empty or malformed
        NegativeCount: If a count is negative

    Example:
        >>> sk = parse_shape_knowledge('{"Bus": {"rectangle": 1, "square": "0-1"}}')
        >>> sk.ranges("bus")["square"], sk.ranges("bus")["triangle"]
        ((0, 1), (0, 0))
    """
    if not document or not document.strip():
        raise SchemaError("Shape knowledge document is empty")
    data = loads_json(document, source="shape knowledge")
    if not isinstance(data, dict) or not data:
        raise SchemaError("Shape knowledge must be a non-empty JSON object")

    table: Dict[str, Dict[str, CountRange]] = {}
    for raw_class, row in data.items():
        class_name = canonical_class_name(raw_class)
        if not isinstance(row, dict):
            raise SchemaError("Shape row must be an object", field=raw_class)
        parsed: Dict[str, CountRange] = {}
        for raw_shape, value in row.items():
            shape = raw_shape.strip().lower()
            if shape.endswith("s") and shape[:-1] in SHAPES:
                shape = shape[:-1]
            if shape not in SHAPES:
                raise SchemaError(
                    f"Unknown shape {raw_shape!r}", field=f"{raw_class}.{raw_shape}"
                )
            parsed[shape] = _as_count_range(value, f"{raw_class}.{raw_shape}")
        table[class_name] = parsed

    return ShapeKnowledge(table=table)


def shape_knowledge_to_document(sk: ShapeKnowledge) -> Dict[str, Any]:
    return {
        class_name: {shape: list(r) for shape, r in row.items()}
        for class_name, row in sk.table.items()
    }


def load_knowledge_graph(path: Union[str, Path]) -> KnowledgeGraph:
    """Read and parse a knowledge-graph file."""
    input_path = Path(path)
    if not input_path.exists():
        raise FileNotFoundError(f"Input file not found: {path}")
    kg = parse_knowledge_graph(input_path.read_text(encoding="utf-8"))
    logger.info(f"Loaded knowledge graph: {len(kg.classes)} classes, {len(kg.rules)} rules")
    return kg


def load_shape_knowledge(path: Union[str, Path]) -> ShapeKnowledge:
    """Read and parse a shape knowledge file."""
    input_path = Path(path)
    if not input_path.exists():
        raise FileNotFoundError(f"Input file not found: {path}")
    return parse_shape_knowledge(input_path.read_text(encoding="utf-8"))


# Registered prompts: key -> (prompt file, document kind)
PROMPT_REGISTRY: Dict[str, Tuple[str, str]] = {
    "size-graph-v1": ("size-graph-v1.txt", "graph"),
    "shape-counts-v1": ("shape-counts-v1.txt", "shapes"),
}


def load_prompt(key: str) -> str:
    """
    Verbatim prompt text registered under ``key``.

    Raises:
        ValidationError: If the key is not registered
    """
    if key not in PROMPT_REGISTRY:
        raise ValidationError(
            f"Unknown prompt key '{key}'. Registered keys: {sorted(PROMPT_REGISTRY)}"
        )
    filename, _ = PROMPT_REGISTRY[key]
    return resources.files("pgrules").joinpath("prompts", filename).read_text(
        encoding="utf-8"
    )


def validate_knowledge_document(key: str, document: str) -> str:
    """
    Validate a fetched document against the kind registered for ``key``.

    Returns:
        The canonical JSON text of the validated document

    Raises:
        ValidationError: If the key is unknown or the document fails parsing
    """
    if key not in PROMPT_REGISTRY:
        raise ValidationError(f"Unknown prompt key '{key}'")
    _, kind = PROMPT_REGISTRY[key]
    text = extract_json_text(document)
    try:
        if kind == "graph":
            return dumps_json(knowledge_graph_to_document(parse_knowledge_graph(text)))
        return dumps_json(shape_knowledge_to_document(parse_shape_knowledge(text)))
    except (SchemaError, WeightOutOfRange, UnknownClass, ConflictingRelation, NegativeCount) as e:
        raise ValidationError(f"Response for '{key}' failed validation: {e}") from e


def fetch_knowledge(prompt_key: str, client) -> str:
    """
    Fetch a knowledge document for a registered prompt.

    The response is validated by the matching parser before it is returned;
    unvalidated LLM output never reaches the rule layers.

    Args:
        prompt_key: Registered prompt key (e.g. 'size-graph-v1')
        client: A KnowledgeClient (fixture store or live HTTP client)

    Returns:
        Canonical JSON text of the validated document

    Raises:
        ValidationError: Unknown key or invalid response
        NetworkError, AuthError: From the live client

    Example:
        >>> from pgrules.llm_client import FixtureKnowledgeClient
        >>> text = fetch_knowledge("shape-counts-v1", FixtureKnowledgeClient())
        >>> "bus" in text
        True
    """
    prompt = load_prompt(prompt_key)
    logger.info(f"Fetching knowledge for prompt '{prompt_key}'")
    raw = client.complete(prompt_key, prompt)
    document = validate_knowledge_document(prompt_key, raw)
    logger.info(f"Successfully validated knowledge document '{prompt_key}'")
    return document


__all__ = [
    "IS_SMALLER",
    "IS_BIGGER",
    "RELATIONS",
    "SHAPES",
    "SizeRule",
    "KnowledgeGraph",
    "ShapeKnowledge",
    "validate_knowledge_graph",
    "parse_knowledge_graph",
    "knowledge_graph_to_document",
    "persist_knowledge_graph",
    "parse_shape_knowledge",
    "shape_knowledge_to_document",
    "load_knowledge_graph",
    "load_shape_knowledge",
    "PROMPT_REGISTRY",
    "load_prompt",
    "validate_knowledge_document",
    "fetch_knowledge",
]
