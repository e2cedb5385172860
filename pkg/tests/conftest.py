"""Shared fixtures for the pgrules test suite."""

import json
from pathlib import Path

import pytest

from pgrules.detections import DEFAULT_VOCABULARY, Detection, DetectionSet
from pgrules.geometry import Box
from pgrules.knowledge import IS_BIGGER, IS_SMALLER, KnowledgeGraph, SizeRule

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_DIR = DATA_DIR / "golden"


def make_detection(uid, box, label, score=0.9, logits=None):
    return Detection(uid=uid, box=Box(*box), label=label, score=score, logits=logits)


def logit_row(label, own, other=-2.0):
    return tuple(own if c == label else other for c in DEFAULT_VOCABULARY)


@pytest.fixture
def vocabulary():
    return DEFAULT_VOCABULARY


@pytest.fixture
def car_in_car():
    """A small car box nested in a large one."""
    return DetectionSet(
        image_id="img-1",
        detections=(
            make_detection("a", (2, 2, 4, 4), "car", 0.7),
            make_detection("b", (0, 0, 10, 10), "car", 0.9),
        ),
    )


@pytest.fixture
def car_bus_graph():
    """Cars are smaller than buses (weight 0.8) and buses bigger than cars."""
    return KnowledgeGraph(
        classes=("car", "bus"),
        rules=(
            SizeRule("car", IS_SMALLER, "bus", 0.8, 0.8),
            SizeRule("bus", IS_BIGGER, "car", 0.8, 0.8),
        ),
    )


@pytest.fixture
def write_json(tmp_path):
    """Write a JSON document under tmp_path and return its path."""

    def _write(name, data):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return _write
