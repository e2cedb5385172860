"""Tests for knowledge graphs, shape knowledge and prompt handling."""

import json

import pytest

from pgrules.errors import (
    ConflictingRelation,
    KnowledgeWriteError,
    NegativeCount,
    SchemaError,
    UnknownClass,
    ValidationError,
    WeightOutOfRange,
)
from pgrules.knowledge import (
    IS_BIGGER,
    IS_SMALLER,
    PROMPT_REGISTRY,
    KnowledgeGraph,
    SizeRule,
    fetch_knowledge,
    knowledge_graph_to_document,
    load_knowledge_graph,
    load_prompt,
    load_shape_knowledge,
    parse_knowledge_graph,
    parse_shape_knowledge,
    persist_knowledge_graph,
    validate_knowledge_document,
    validate_knowledge_graph,
)
from pgrules.llm_client import FixtureKnowledgeClient


def graph_document(rules, classes=("car", "bus", "truck")):
    return json.dumps({"classes": list(classes), "rules": rules})


class TestParseKnowledgeGraph:
    def test_canonical_document(self):
        kg = parse_knowledge_graph(
            graph_document(
                [{"subject": "Car", "relation": IS_SMALLER, "object": "Bus", "weight": 0.9}]
            )
        )
        assert kg.classes == ("car", "bus", "truck")
        assert kg.rules[0] == SizeRule("car", IS_SMALLER, "bus", 0.9, 0.9)
        assert kg.class_to_index["bus"] == 1
        assert kg.index_to_class[2] == "truck"

    def test_nodes_and_edges_document(self):
        kg = parse_knowledge_graph(
            json.dumps(
                {
                    "nodes": [
                        {
                            "name": "Car",
                            "edges": [{"relation": IS_SMALLER, "target": "Bus", "weight": 0.7}],
                        },
                        {"name": "Bus", "edges": []},
                    ]
                }
            )
        )
        assert kg.classes == ("car", "bus")
        assert kg.rules[0].key == ("car", IS_SMALLER, "bus")

    def test_weight_out_of_range(self):
        with pytest.raises(WeightOutOfRange):
            parse_knowledge_graph(
                graph_document(
                    [{"subject": "car", "relation": IS_SMALLER, "object": "bus", "weight": 1.2}]
                )
            )

    def test_unknown_endpoint(self):
        with pytest.raises(UnknownClass):
            parse_knowledge_graph(
                graph_document(
                    [{"subject": "car", "relation": IS_SMALLER, "object": "boat", "weight": 0.5}]
                )
            )

    def test_conflicting_relations(self):
        with pytest.raises(ConflictingRelation):
            parse_knowledge_graph(
                graph_document(
                    [
                        {"subject": "car", "relation": IS_SMALLER, "object": "bus", "weight": 0.5},
                        {"subject": "car", "relation": IS_BIGGER, "object": "bus", "weight": 0.5},
                    ]
                )
            )

    def test_size_cycle_rejected(self):
        cycle = [("car", "bus"), ("bus", "truck"), ("truck", "car")]
        rules = [
            {"subject": s, "relation": IS_SMALLER, "object": o, "weight": 0.5} for s, o in cycle
        ]
        with pytest.raises(ConflictingRelation):
            parse_knowledge_graph(graph_document(rules))

    def test_mirrored_rules_are_consistent(self, car_bus_graph):
        assert validate_knowledge_graph(car_bus_graph) is car_bus_graph

    def test_self_relation_rejected(self):
        with pytest.raises(SchemaError):
            parse_knowledge_graph(
                graph_document(
                    [{"subject": "car", "relation": IS_SMALLER, "object": "car", "weight": 0.5}]
                )
            )

    def test_unknown_relation(self):
        with pytest.raises(SchemaError, match="relation"):
            parse_knowledge_graph(
                graph_document(
                    [{"subject": "car", "relation": "isNear", "object": "bus", "weight": 0.5}]
                )
            )

    def test_invalid_json(self):
        with pytest.raises(SchemaError):
            parse_knowledge_graph("{not json")


class TestPersistKnowledgeGraph:
    def test_round_trip_keeps_initial_weights(self, tmp_path, car_bus_graph):
        updated = car_bus_graph.with_rules(
            [
                SizeRule(r.subject, r.relation, r.object, 0.86, r.initial_llm_weight)
                for r in car_bus_graph.rules
            ]
        )
        path = persist_knowledge_graph(updated, tmp_path / "kg.json")
        reloaded = load_knowledge_graph(path)
        assert reloaded == updated
        assert all(r.initial_llm_weight == 0.8 for r in reloaded.rules)

    def test_invalid_graph_is_not_written(self, tmp_path):
        bad = KnowledgeGraph(
            classes=("car", "bus"), rules=(SizeRule("car", IS_SMALLER, "bus", 1.5, 0.5),)
        )
        target = tmp_path / "kg.json"
        with pytest.raises(WeightOutOfRange):
            persist_knowledge_graph(bad, target)
        assert not target.exists()

    def test_unwritable_destination(self, tmp_path, car_bus_graph):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(KnowledgeWriteError):
            persist_knowledge_graph(car_bus_graph, blocker / "kg.json")

    def test_document_is_canonical(self, car_bus_graph):
        document = knowledge_graph_to_document(car_bus_graph)
        assert set(document) == {"classes", "rules"}
        assert document["rules"][0]["initial_llm_weight"] == 0.8

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_knowledge_graph(tmp_path / "missing.json")


class TestShapeKnowledge:
    def test_range_forms(self):
        sk = parse_shape_knowledge(
            json.dumps({"Bus": {"rectangles": 1, "squares": "0-1", "trapezoid": [2, 3]}})
        )
        ranges = sk.ranges("bus")
        assert ranges["rectangle"] == (1, 1)
        assert ranges["square"] == (0, 1)
        assert ranges["trapezoid"] == (2, 3)
        assert ranges["triangle"] == (0, 0)

    def test_unknown_class(self):
        sk = parse_shape_knowledge('{"bus": {"rectangle": 1}}')
        with pytest.raises(UnknownClass):
            sk.ranges("boat")

    def test_negative_count(self):
        with pytest.raises(NegativeCount):
            parse_shape_knowledge('{"bus": {"rectangle": -1}}')

    def test_unknown_shape(self):
        with pytest.raises(SchemaError):
            parse_shape_knowledge('{"bus": {"circle": 1}}')

    def test_empty_document(self):
        with pytest.raises(SchemaError):
            parse_shape_knowledge("   ")

    def test_inverted_range(self):
        with pytest.raises(SchemaError):
            parse_shape_knowledge('{"bus": {"square": "2-1"}}')

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "shapes.json"
        path.write_text('{"car": {"rectangle": 1}}', encoding="utf-8")
        assert load_shape_knowledge(path).classes == ["car"]


class TestPrompts:
    def test_registered_prompts_load(self):
        for key in PROMPT_REGISTRY:
            assert load_prompt(key).strip()

    def test_size_prompt_is_verbatim(self):
        assert load_prompt("size-graph-v1").startswith(
            "Generate a JSON structure representing a knowledge graph"
        )

    def test_unknown_prompt(self):
        with pytest.raises(ValidationError):
            load_prompt("nope")


class TestFetchKnowledge:
    def test_bundled_size_graph(self):
        kg = parse_knowledge_graph(fetch_knowledge("size-graph-v1", FixtureKnowledgeClient()))
        assert set(kg.classes) == {"bicycle", "motorcycle", "car", "bus", "truck", "boat"}
        assert all(r.weight == r.initial_llm_weight for r in kg.rules)

    def test_bundled_shape_table(self):
        sk = parse_shape_knowledge(fetch_knowledge("shape-counts-v1", FixtureKnowledgeClient()))
        assert sk.ranges("truck")["rectangle"] == (1, 2)
        assert sk.ranges("bicycle")["triangle"] == (1, 2)

    def test_invalid_response_rejected(self):
        class BadClient:
            def complete(self, prompt_key, prompt):
                return json.dumps(
                    {
                        "classes": ["car"],
                        "rules": [
                            {
                                "subject": "car",
                                "relation": "isSmallerThan",
                                "object": "car",
                                "weight": 0.5,
                            }
                        ],
                    }
                )

        with pytest.raises(ValidationError):
            fetch_knowledge("size-graph-v1", BadClient())

    def test_fenced_response_accepted(self):
        fenced = '```json\n{"car": {"rectangle": 1}}\n```'
        canonical = validate_knowledge_document("shape-counts-v1", fenced)
        assert json.loads(canonical) == {"car": {"rectangle": [1, 1]}}

    def test_client_receives_prompt_text(self):
        seen = {}

        class RecordingClient:
            def complete(self, prompt_key, prompt):
                seen["key"], seen["prompt"] = prompt_key, prompt
                return '{"bus": {"rectangle": 1}}'

        fetch_knowledge("shape-counts-v1", RecordingClient())
        assert seen["key"] == "shape-counts-v1"
        assert seen["prompt"] == load_prompt("shape-counts-v1")
