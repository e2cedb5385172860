"""Tests for evaluation statistics."""

import numpy as np
import pytest

from pgrules.detections import DetectionSet
from pgrules.errors import InvalidCounts, ProvenanceMismatch, SchemaError, UnknownClass
from pgrules.evalmetrics import (
    Annotation,
    GroundTruthSet,
    average_iou_at,
    box_reduction_report,
    confidence_change_report,
    count_false_positives,
    evaluate,
    fp_reduction_report,
    match_detections,
    mean_average_precision,
    parse_ground_truth_document,
    per_class_ap,
    read_ground_truth,
)
from pgrules.geometry import Box
from pgrules.testkit import oracle_ap

from .conftest import make_detection


def gt(*records):
    """Ground truth from (image_id, box, label) triples."""
    images = {}
    for image_id, box, label in records:
        images.setdefault(image_id, []).append(Annotation(Box(*box), label))
    return GroundTruthSet({k: tuple(v) for k, v in images.items()})


@pytest.fixture
def three_images():
    """Two true cars, one true bus and one confident car false positive."""
    truth = gt(
        ("a", (0, 0, 10, 10), "car"),
        ("b", (0, 0, 20, 20), "bus"),
        ("c", (0, 0, 10, 10), "car"),
    )
    preds = [
        DetectionSet("a", (make_detection("a0", (0, 0, 10, 10), "car", 0.9),)),
        DetectionSet(
            "b",
            (
                make_detection("b0", (0, 0, 20, 20), "bus", 0.8),
                make_detection("b1", (30, 30, 40, 40), "car", 0.95),
            ),
        ),
        DetectionSet("c", (make_detection("c0", (0, 0, 10, 10), "car", 0.7),)),
    ]
    return preds, truth


def random_instance(rng):
    labels = ("car", "bus")
    n_images = int(rng.integers(1, 4))
    records, preds = [], []
    remaining = 20
    for k in range(n_images):
        image_id = f"i{k}"
        for _ in range(int(rng.integers(1, 4))):
            x, y = (int(v) for v in rng.integers(0, 30, size=2))
            w, h = (int(v) for v in rng.integers(2, 12, size=2))
            label = labels[int(rng.integers(0, 2))]
            records.append((image_id, (x, y, x + w, y + h), label))
        detections = []
        for i in range(int(rng.integers(0, min(6, remaining) + 1))):
            x, y = (int(v) for v in rng.integers(0, 30, size=2))
            detections.append(
                make_detection(
                    f"{image_id}-{i}",
                    (x, y, x + int(rng.integers(2, 12)), y + int(rng.integers(2, 12))),
                    labels[int(rng.integers(0, 2))],
                    float(rng.integers(1, 10)) / 10,
                )
            )
        remaining -= len(detections)
        preds.append(DetectionSet(image_id, tuple(detections)))
    return preds, gt(*records)


class TestGroundTruth:
    def test_parse_box_and_bbox(self):
        truth = parse_ground_truth_document(
            {
                "images": [
                    {
                        "image_id": "a",
                        "annotations": [
                            {"box": [0, 0, 10, 10], "label": "Car"},
                            {"bbox": [5, 5, 10, 10], "label": "bus"},
                        ],
                    }
                ]
            }
        )
        assert truth.for_image("a")[1].box == Box(5, 5, 15, 15)
        assert truth.class_counts() == {"car": 1, "bus": 1}

    def test_unknown_label(self):
        with pytest.raises(UnknownClass):
            parse_ground_truth_document(
                {
                    "images": [
                        {
                            "image_id": "a",
                            "annotations": [{"box": [0, 0, 1, 1], "label": "tram"}],
                        }
                    ]
                }
            )

    def test_missing_images(self):
        with pytest.raises(SchemaError):
            parse_ground_truth_document({"annotations": []})

    def test_file_round_trip(self, write_json, three_images):
        _, truth = three_images
        assert read_ground_truth(write_json("gt.json", truth.to_dict())) == truth


class TestMatching:
    def test_higher_score_matches_first(self):
        ds = DetectionSet(
            "a",
            (
                make_detection("low", (0, 0, 10, 10), "car", 0.5),
                make_detection("high", (1, 0, 11, 10), "car", 0.9),
            ),
        )
        result = match_detections(ds, [Annotation(Box(0, 0, 10, 10), "car")])
        assert [m[0] for m in result.matches] == [1]
        assert result.unmatched_preds == (0,)

    def test_class_aware(self):
        ds = DetectionSet("a", (make_detection("p", (0, 0, 10, 10), "bus", 0.9),))
        result = match_detections(ds, [Annotation(Box(0, 0, 10, 10), "car")])
        assert result.matches == ()
        assert result.unmatched_gts == (0,)

    def test_below_threshold_is_unmatched(self):
        ds = DetectionSet("a", (make_detection("p", (0, 0, 10, 10), "car", 0.9),))
        result = match_detections(ds, [Annotation(Box(0, 5, 10, 15), "car")])
        assert result.matches == ()

    def test_threshold_range(self):
        with pytest.raises(ValueError):
            match_detections(DetectionSet("a"), [], 0.0)


class TestAverageIoU:
    def test_thresholds_drop_pairs(self):
        ds = DetectionSet(
            "a",
            (
                make_detection("exact", (0, 0, 10, 10), "car", 0.9),
                make_detection("loose", (100, 100, 110, 106), "car", 0.8),
            ),
        )
        truth = gt(("a", (0, 0, 10, 10), "car"), ("a", (100, 100, 110, 110), "car"))
        assert average_iou_at(ds, truth, 0.5) == pytest.approx(0.8)
        assert average_iou_at(ds, truth, 0.75) == 1.0

    def test_no_pairs(self):
        assert average_iou_at([DetectionSet("a")], gt(("a", (0, 0, 1, 1), "car")), 0.5) == 0.0


class TestMeanAveragePrecision:
    def test_perfect_detections(self):
        truth = gt(("a", (0, 0, 10, 10), "car"), ("a", (20, 20, 40, 40), "bus"))
        preds = [
            DetectionSet(
                "a",
                (
                    make_detection("c", (0, 0, 10, 10), "car"),
                    make_detection("b", (20, 20, 40, 40), "bus"),
                ),
            )
        ]
        assert mean_average_precision(preds, truth) == 1.0
        assert oracle_ap(preds, truth) == pytest.approx(1.0)

    def test_no_detections(self):
        truth = gt(("a", (0, 0, 10, 10), "car"))
        assert mean_average_precision([DetectionSet("a")], truth) == 0.0
        assert oracle_ap([DetectionSet("a")], truth) == 0.0

    def test_confident_false_positive(self, three_images):
        preds, truth = three_images
        # car PR points: (0, 0), (0.5, 0.5), (1, 2/3) -> AP 2/3; bus AP 1
        assert per_class_ap(preds, truth) == pytest.approx({"bus": 1.0, "car": 2 / 3})
        assert mean_average_precision(preds, truth) == pytest.approx(5 / 6, abs=1e-12)
        assert oracle_ap(preds, truth) == pytest.approx(
            mean_average_precision(preds, truth), abs=1e-12
        )

    def test_empty_ground_truth(self):
        with pytest.raises(ValueError):
            mean_average_precision([DetectionSet("a")], GroundTruthSet())

    def test_agrees_with_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            preds, truth = random_instance(rng)
            assert mean_average_precision(preds, truth) == pytest.approx(
                oracle_ap(preds, truth), abs=1e-12
            )

    def test_extra_unmatched_prediction_never_raises_ap(self):
        rng = np.random.default_rng(19)
        for _ in range(100):
            preds, truth = random_instance(rng)
            before = per_class_ap(preds, truth)
            far = make_detection(
                "far",
                (500, 500, 510, 510),
                ("car", "bus")[int(rng.integers(0, 2))],
                float(rng.integers(1, 10)) / 10,
            )
            first = preds[0]
            extended = [first.with_detections(first.detections + (far,))] + preds[1:]
            after = per_class_ap(extended, truth)
            for label, ap in before.items():
                assert after[label] <= ap + 1e-12


class TestFalsePositives:
    def test_counts_by_group(self, three_images):
        preds, truth = three_images
        assert count_false_positives(preds, truth) == {"water": 0, "land": 1}

    def test_class_outside_groups(self, three_images):
        preds, truth = three_images
        with pytest.raises(ValueError):
            count_false_positives(preds, truth, {"land": ("bus",)})

    def test_false_positives_and_matches_cover_every_prediction(self):
        groups = {"small": ("car",), "large": ("bus",)}
        rng = np.random.default_rng(23)
        for _ in range(100):
            preds, truth = random_instance(rng)
            fps = count_false_positives(preds, truth, groups)
            for group, classes in groups.items():
                total = matched = 0
                for ds in preds:
                    labels = [d.label for d in ds]
                    total += sum(label in classes for label in labels)
                    matches = match_detections(ds, truth, 0.5).matches
                    matched += sum(labels[i] in classes for i, _, _ in matches)
                assert fps[group] + matched == total

    def test_reduction_report_shows_published_values(self):
        report = fp_reduction_report({"water": 110, "land": 182}, {"water": 28, "land": 111})
        assert report["water"]["reduction_percent"] == pytest.approx(74.545454, abs=1e-5)
        assert report["water"]["published_percent"] == 74.55
        assert report["overall"]["baseline"] == 292
        assert report["overall"]["published_percent"] == 52.4

    def test_zero_baseline_has_no_percentage(self):
        report = fp_reduction_report({"water": 0}, {"water": 0})
        assert report["water"]["reduction_percent"] is None


class TestBoxReduction:
    def test_published_counts(self):
        report = box_reduction_report(598, 451)
        assert report.reduction_percent == pytest.approx(24.58, abs=0.01)
        assert report.published_percent == 37.88

    def test_no_change(self):
        assert box_reduction_report(10, 10).reduction_percent == 0.0

    @pytest.mark.parametrize("counts", [(0, 0), (5, 6), (5, -1)])
    def test_invalid_counts(self, counts):
        with pytest.raises(InvalidCounts):
            box_reduction_report(*counts)


class TestConfidenceChanges:
    def test_increase_decrease_and_removal(self):
        before = [
            DetectionSet(
                "a",
                (
                    make_detection("up", (0, 0, 1, 1), "car", 0.5),
                    make_detection("down", (0, 0, 1, 1), "car", 0.5),
                    make_detection("same", (0, 0, 1, 1), "car", 0.5),
                    make_detection("gone", (0, 0, 1, 1), "car", 0.5),
                ),
            )
        ]
        after = [
            DetectionSet(
                "a",
                (
                    make_detection("up", (0, 0, 1, 1), "car", 0.6),
                    make_detection("down", (0, 0, 1, 1), "car", 0.4),
                    make_detection("same", (0, 0, 1, 1), "car", 0.5),
                ),
            )
        ]
        changes = confidence_change_report(before, after)
        assert (changes.num_increased, changes.num_decreased, changes.num_removed) == (1, 2, 1)
        assert changes.pct_increased == 25.0
        assert changes.pct_decreased == 50.0

    def test_unknown_detection(self):
        before = [DetectionSet("a", (make_detection("x", (0, 0, 1, 1), "car"),))]
        after = [DetectionSet("a", (make_detection("y", (0, 0, 1, 1), "car"),))]
        with pytest.raises(ProvenanceMismatch):
            confidence_change_report(before, after)


class TestEvaluate:
    def test_report_contents(self, three_images):
        preds, truth = three_images
        refined = [preds[0], preds[1].without([1]), preds[2]]
        report = evaluate(preds, refined, truth, details={"layers": ["redundancy-containment"]})

        assert report.baseline.map == pytest.approx(5 / 6)
        assert report.map == 1.0
        assert report.fp_per_class_group["land"]["refined"] == 0
        assert report.box_counts.baseline == 4 and report.box_counts.refined == 3
        assert report.confidence_changes.num_removed == 1

        document = report.to_dict()
        assert set(document) >= {
            "metrics",
            "false_positives",
            "box_counts",
            "confidence_changes",
            "layers",
        }
        assert document["metrics"]["refined"]["avg_iou_at"]["0.5"] == 1.0

        text = report.render_text()
        assert "Detection metrics" in text
        assert "Published (%)" in text
        assert "Layer order: redundancy-containment" in text
