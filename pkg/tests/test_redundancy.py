"""Tests for the redundancy layer."""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgrules.detections import DetectionSet
from pgrules.errors import ZeroAreaBox
from pgrules.geometry import is_contained, overlap_fraction
from pgrules.redundancy import (
    apply_containment_filter,
    apply_redundancy_filter,
    find_contained_redundant,
    find_overlap_redundant,
)
from pgrules.testkit import oracle_redundancy

from .conftest import make_detection

CLASSES = ("car", "bus", "boat")


def random_set(rng, max_boxes=50):
    n = int(rng.integers(0, max_boxes + 1))
    detections = []
    for i in range(n):
        x1, y1 = (int(v) for v in rng.integers(0, 60, size=2))
        w, h = (int(v) for v in rng.integers(1, 30, size=2))
        # coarse scores make ties common
        score = float(rng.integers(1, 6)) / 5
        label = CLASSES[int(rng.integers(0, len(CLASSES)))]
        detections.append(make_detection(f"d{i}", (x1, y1, x1 + w, y1 + h), label, score))
    return DetectionSet(image_id="rand", detections=tuple(detections))


@st.composite
def detection_sets(draw, max_boxes=12):
    n = draw(st.integers(0, max_boxes))
    detections = []
    for i in range(n):
        x1 = draw(st.integers(0, 30))
        y1 = draw(st.integers(0, 30))
        w = draw(st.integers(1, 15))
        h = draw(st.integers(1, 15))
        label = draw(st.sampled_from(CLASSES[:2]))
        score = draw(st.sampled_from([0.2, 0.4, 0.6, 0.8]))
        detections.append(make_detection(f"d{i}", (x1, y1, x1 + w, y1 + h), label, score))
    return DetectionSet(image_id="drawn", detections=tuple(detections))


def surviving_indices(ds, filtered):
    kept = {d.uid for d in filtered}
    return {i for i, d in enumerate(ds) if d.uid in kept}


def related(a, b, rf):
    return is_contained(a, b) or overlap_fraction(a, b) >= rf


def without_mutual_pairs(ds, rf):
    # drop later detections until no same-class pair covers each other at rf
    kept = []
    for d in ds:
        if all(
            k.label != d.label or not (related(d.box, k.box, rf) and related(k.box, d.box, rf))
            for k in kept
        ):
            kept.append(d)
    return ds.with_detections(kept)


class TestContainment:
    def test_car_in_car(self, car_in_car):
        assert find_contained_redundant(car_in_car) == {0}
        refined = apply_containment_filter(car_in_car)
        assert [d.uid for d in refined] == ["b"]

    def test_different_classes_are_not_redundant(self):
        ds = DetectionSet(
            "img",
            (
                make_detection("a", (2, 2, 4, 4), "car"),
                make_detection("b", (0, 0, 10, 10), "bus"),
            ),
        )
        assert find_contained_redundant(ds) == set()

    def test_identical_boxes_keep_higher_score(self):
        ds = DetectionSet(
            "img",
            (
                make_detection("low", (0, 0, 5, 5), "car", 0.4),
                make_detection("high", (0, 0, 5, 5), "car", 0.8),
            ),
        )
        assert find_contained_redundant(ds) == {0}

    def test_identical_boxes_equal_scores_keep_lower_index(self):
        ds = DetectionSet(
            "img",
            (
                make_detection("first", (0, 0, 5, 5), "car", 0.5),
                make_detection("second", (0, 0, 5, 5), "car", 0.5),
            ),
        )
        assert find_contained_redundant(ds) == {1}

    def test_empty_and_single(self):
        assert len(apply_containment_filter(DetectionSet("img"))) == 0
        single = DetectionSet("img", (make_detection("a", (0, 0, 1, 1), "car"),))
        assert apply_containment_filter(single) == single


class TestOverlap:
    def test_overlap_above_rf_flags_covered_box(self):
        ds = DetectionSet(
            "img",
            (
                make_detection("big", (0, 0, 10, 10), "car", 0.9),
                make_detection("shifted", (0, 3, 10, 13), "car", 0.8),
            ),
        )
        # each covers 70% of the other; the lower score goes
        assert find_overlap_redundant(ds, 0.6) == {1}

    def test_overlap_below_rf_keeps_both(self):
        ds = DetectionSet(
            "img",
            (
                make_detection("a", (0, 0, 10, 10), "car"),
                make_detection("b", (0, 5, 10, 15), "car"),
            ),
        )
        assert find_overlap_redundant(ds, 0.6) == set()

    def test_asymmetric_overlap_flags_only_covered_box(self):
        ds = DetectionSet(
            "img",
            (
                make_detection("wide", (0, 0, 20, 10), "car", 0.5),
                make_detection("narrow", (5, 0, 12, 10), "car", 0.9),
            ),
        )
        # narrow lies inside wide; wide is only 35% covered
        assert find_overlap_redundant(ds, 0.6) == {1}

    def test_containment_is_redundant_even_at_rf_one(self):
        assert find_overlap_redundant(
            DetectionSet(
                "img",
                (
                    make_detection("a", (2, 2, 4, 4), "car"),
                    make_detection("b", (0, 0, 10, 10), "car"),
                ),
            ),
            1.0,
        ) == {0}

    def test_rf_out_of_range(self, car_in_car):
        with pytest.raises(ValueError):
            apply_redundancy_filter(car_in_car, 1.5)

    def test_zero_area_box_with_peer_raises(self):
        ds = DetectionSet(
            "img",
            (
                make_detection("flat", (0, 0, 10, 0), "car"),
                make_detection("b", (20, 20, 30, 30), "car"),
            ),
        )
        with pytest.raises(ZeroAreaBox):
            apply_redundancy_filter(ds)

    def test_survivors_keep_order_and_logits(self):
        logits = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
        ds = DetectionSet(
            "img",
            (
                make_detection("x", (50, 50, 60, 60), "bus", 0.6, logits),
                make_detection("a", (2, 2, 4, 4), "car", 0.5),
                make_detection("y", (0, 0, 10, 10), "car", 0.9, logits),
            ),
        )
        refined = apply_redundancy_filter(ds)
        assert [d.uid for d in refined] == ["x", "y"]
        assert refined[0].logits == logits


class TestOracleEquivalence:
    def test_oracle_trivial_cases(self):
        assert oracle_redundancy(DetectionSet("img"), 0.6) == set()
        single = DetectionSet("img", (make_detection("a", (0, 0, 1, 1), "car"),))
        assert oracle_redundancy(single, 0.6) == {0}

    def test_agrees_with_oracle_on_random_sets(self):
        rng = np.random.default_rng(2024)
        mismatches = 0
        for _ in range(1000):
            ds = random_set(rng)
            rf = float(rng.choice([0.3, 0.6, 0.9]))
            expected = oracle_redundancy(ds, rf)
            actual = surviving_indices(ds, apply_redundancy_filter(ds, rf))
            mismatches += expected != actual
        assert mismatches == 0

    def test_runtime_on_thousand_sets(self):
        rng = np.random.default_rng(7)
        sets = [random_set(rng) for _ in range(1000)]
        started = time.perf_counter()
        for ds in sets:
            apply_redundancy_filter(ds, 0.6)
        assert time.perf_counter() - started < 5.0


class TestFilterProperties:
    @settings(max_examples=300, deadline=None)
    @given(detection_sets(), st.sampled_from([0.0, 0.3, 0.6, 1.0]))
    def test_idempotent(self, ds, rf):
        once = apply_redundancy_filter(ds, rf)
        assert apply_redundancy_filter(once, rf) == once

    @settings(max_examples=300, deadline=None)
    @given(detection_sets(), st.sampled_from([0.3, 0.6, 0.9]))
    def test_no_surviving_pair_is_redundant(self, ds, rf):
        survivors = list(apply_redundancy_filter(ds, rf))
        for i, a in enumerate(survivors):
            for b in survivors[i + 1 :]:
                if a.label == b.label:
                    assert not related(a.box, b.box, rf)
                    assert not related(b.box, a.box, rf)

    @settings(max_examples=300, deadline=None)
    @given(detection_sets(), st.sampled_from([(0.3, 0.6), (0.5, 0.7), (0.6, 0.9)]))
    def test_raising_rf_keeps_survivors_without_mutual_pairs(self, drawn, rfs):
        rf_lo, rf_hi = rfs
        ds = without_mutual_pairs(drawn, rf_lo)
        low = {d.uid for d in apply_redundancy_filter(ds, rf_lo)}
        high = {d.uid for d in apply_redundancy_filter(ds, rf_hi)}
        assert low <= high

    def test_raising_rf_can_swap_the_survivor_of_a_mutual_pair(self):
        ds = DetectionSet(
            "img",
            (
                make_detection("i", (0, 0, 10, 10), "car", 0.9),
                make_detection("j", (2, 0, 12, 12), "car", 0.5),
            ),
        )
        # i is 80% covered by j, j is 2/3 covered by i
        assert [d.uid for d in apply_redundancy_filter(ds, 0.6)] == ["i"]
        assert [d.uid for d in apply_redundancy_filter(ds, 0.7)] == ["j"]
