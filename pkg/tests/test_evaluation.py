from fractions import Fraction

import pytest

from stackgrasp.dataset import (
    SceneGrasp,
    SceneObject,
    SceneRecord,
    record_to_predictions,
)
from stackgrasp.evaluation import (
    MatchThresholds,
    average_precision,
    evaluate,
    grasp_correct,
    match_detections,
    relation_metrics,
    sequential_success,
)
from stackgrasp.geometry import AABox, OrientedRect
from stackgrasp.perception import (
    GraspCandidate,
    ObjectDetection,
    PerceivedObject,
    ScenePredictions,
)


def record_one(category="cup", box=(100.0, 100.0, 200.0, 200.0), theta=0.0):
    return SceneRecord(
        width=640,
        height=480,
        objects=(SceneObject(1, category, AABox(*box)),),
        grasps=(SceneGrasp(1, OrientedRect(150.0, 150.0, 60.0, 20.0, theta)),),
        relations=(),
    )


def preds_one(score=1.0, box=(100.0, 100.0, 200.0, 200.0), grasp=None, category="cup"):
    p = ScenePredictions()
    p.detections = [
        ObjectDetection(box=AABox(*box), category=category, score=score, instance_id=1)
    ]
    rect = OrientedRect(*grasp) if grasp else OrientedRect(150.0, 150.0, 60.0, 20.0, 0.0)
    p.grasp_candidates = {1: [GraspCandidate(rect=rect, confidence=1.0)]}
    return p


def chain_record():
    """Objects 1 above 2 above 3 (transitively closed)."""
    return SceneRecord(
        width=640,
        height=480,
        objects=(
            SceneObject(1, "cup", AABox(120.0, 120.0, 180.0, 180.0)),
            SceneObject(2, "box", AABox(100.0, 100.0, 200.0, 200.0)),
            SceneObject(3, "notebook", AABox(80.0, 80.0, 220.0, 220.0)),
        ),
        grasps=(
            SceneGrasp(1, OrientedRect(150.0, 150.0, 40.0, 16.0, 0.0)),
            SceneGrasp(2, OrientedRect(150.0, 150.0, 70.0, 24.0, 45.0)),
            SceneGrasp(3, OrientedRect(150.0, 150.0, 100.0, 30.0, -45.0)),
        ),
        relations=((1, 2), (2, 3), (1, 3)),
    )


class TestMatchThresholds:
    def test_defaults(self):
        t = MatchThresholds()
        assert (t.iou, t.jaccard, t.angle_deg, t.top_n) == (0.5, 0.25, 30.0, 3)

    def test_validation(self):
        with pytest.raises(ValueError):
            MatchThresholds(iou=0.0)
        with pytest.raises(ValueError):
            MatchThresholds(jaccard=1.0)
        with pytest.raises(ValueError):
            MatchThresholds(angle_deg=120.0)
        with pytest.raises(ValueError):
            MatchThresholds(top_n=0)

    def test_json_dict(self):
        assert MatchThresholds().to_json_dict() == {
            "iou": 0.5,
            "jaccard": 0.25,
            "angle_deg": 30.0,
            "top_n": 3,
        }


class TestGraspCorrect:
    def perceived_with(self, rect):
        det = ObjectDetection(
            box=AABox(100.0, 100.0, 200.0, 200.0), category="cup", score=1.0, instance_id=1
        )
        return PerceivedObject(detection=det, best_grasp=rect, grasp_confidence=1.0)

    def test_exact_grasp_matches(self):
        rec = record_one()
        p = self.perceived_with(OrientedRect(150.0, 150.0, 60.0, 20.0, 0.0))
        assert grasp_correct(p, rec, 1, MatchThresholds())

    def test_missing_grasp_fails(self):
        p = self.perceived_with(None)
        assert not grasp_correct(p, record_one(), 1, MatchThresholds())

    def test_angle_gate(self):
        rec = record_one()
        ok = self.perceived_with(OrientedRect(150.0, 150.0, 60.0, 20.0, 29.0))
        bad = self.perceived_with(OrientedRect(150.0, 150.0, 60.0, 20.0, 31.0))
        assert grasp_correct(ok, rec, 1, MatchThresholds())
        assert not grasp_correct(bad, rec, 1, MatchThresholds())

    def test_angle_gate_is_strict(self):
        rec = record_one()
        edge = self.perceived_with(OrientedRect(150.0, 150.0, 60.0, 20.0, 30.0))
        assert not grasp_correct(edge, rec, 1, MatchThresholds())

    def test_jaccard_gate(self):
        # square grasps of side 20 shifted by dx: jaccard (20-dx)/(20+dx);
        # 12 -> 0.25 exactly (rejected, strict), 11.9 -> just above
        rec = SceneRecord(
            width=640,
            height=480,
            objects=(SceneObject(1, "cup", AABox(100.0, 100.0, 200.0, 200.0)),),
            grasps=(SceneGrasp(1, OrientedRect(150.0, 150.0, 20.0, 20.0, 0.0)),),
            relations=(),
        )
        at_threshold = self.perceived_with(OrientedRect(162.0, 150.0, 20.0, 20.0, 0.0))
        above = self.perceived_with(OrientedRect(161.9, 150.0, 20.0, 20.0, 0.0))
        assert not grasp_correct(at_threshold, rec, 1, MatchThresholds())
        assert grasp_correct(above, rec, 1, MatchThresholds())

    def test_any_owned_grasp_suffices(self):
        rec = SceneRecord(
            width=640,
            height=480,
            objects=(SceneObject(1, "cup", AABox(100.0, 100.0, 200.0, 200.0)),),
            grasps=(
                SceneGrasp(1, OrientedRect(120.0, 120.0, 20.0, 8.0, 80.0)),
                SceneGrasp(1, OrientedRect(150.0, 150.0, 60.0, 20.0, 0.0)),
            ),
            relations=(),
        )
        p = self.perceived_with(OrientedRect(150.0, 150.0, 60.0, 20.0, 5.0))
        assert grasp_correct(p, rec, 1, MatchThresholds())


class TestAveragePrecision:
    def test_perfect_prediction_is_exactly_one(self):
        records = [chain_record(), record_one()]
        preds = [record_to_predictions(r) for r in records]
        mean_ap, per_class = average_precision(records, preds)
        assert mean_ap == Fraction(1)
        assert all(v == Fraction(1) for v in per_class.values())
        assert set(per_class) == {"cup", "box", "notebook"}

    def test_tp_fp_tp_hand_value(self):
        # one class, 2 ground truths, ranked TP(0.9), FP(0.8), TP(0.7):
        # precision at the recall points is 1 and 2/3 -> AP = 5/6
        rec = SceneRecord(
            width=640,
            height=480,
            objects=(
                SceneObject(1, "cup", AABox(100.0, 100.0, 200.0, 200.0)),
                SceneObject(2, "cup", AABox(300.0, 100.0, 400.0, 200.0)),
            ),
            grasps=(
                SceneGrasp(1, OrientedRect(150.0, 150.0, 60.0, 20.0, 0.0)),
                SceneGrasp(2, OrientedRect(350.0, 150.0, 60.0, 20.0, 0.0)),
            ),
            relations=(),
        )
        p = ScenePredictions()
        p.detections = [
            ObjectDetection(AABox(100.0, 100.0, 200.0, 200.0), "cup", 0.9, 11),
            ObjectDetection(AABox(500.0, 300.0, 600.0, 400.0), "cup", 0.8, 12),
            ObjectDetection(AABox(300.0, 100.0, 400.0, 200.0), "cup", 0.7, 13),
        ]
        p.grasp_candidates = {
            11: [GraspCandidate(OrientedRect(150.0, 150.0, 60.0, 20.0, 0.0), 1.0)],
            12: [GraspCandidate(OrientedRect(550.0, 350.0, 60.0, 20.0, 0.0), 1.0)],
            13: [GraspCandidate(OrientedRect(350.0, 150.0, 60.0, 20.0, 0.0), 1.0)],
        }
        mean_ap, per_class = average_precision([rec], [p])
        assert per_class["cup"] == Fraction(5, 6)
        assert mean_ap == Fraction(5, 6)

    def test_failed_grasp_does_not_consume_ground_truth(self):
        # the higher-scoring detection matches the box but misses the grasp;
        # the lower one earns the object, giving recall 1 at precision 1/2
        rec = record_one()
        p = ScenePredictions()
        p.detections = [
            ObjectDetection(AABox(100.0, 100.0, 200.0, 200.0), "cup", 0.9, 11),
            ObjectDetection(AABox(100.0, 100.0, 200.0, 200.0), "cup", 0.8, 12),
        ]
        p.grasp_candidates = {
            11: [GraspCandidate(OrientedRect(150.0, 150.0, 60.0, 20.0, 80.0), 1.0)],
            12: [GraspCandidate(OrientedRect(150.0, 150.0, 60.0, 20.0, 0.0), 1.0)],
        }
        mean_ap, per_class = average_precision([rec], [p])
        assert per_class["cup"] == Fraction(1, 2)

    def test_unpredicted_class_scores_zero(self):
        records = [record_one(category="cup"), record_one(category="pen")]
        preds = [record_to_predictions(records[0]), ScenePredictions()]
        mean_ap, per_class = average_precision(records, preds)
        assert per_class == {"cup": Fraction(1), "pen": Fraction(0)}
        assert mean_ap == Fraction(1, 2)

    def test_graspless_detection_is_a_false_positive(self):
        rec = record_one()
        p = ScenePredictions()
        p.detections = [
            ObjectDetection(AABox(100.0, 100.0, 200.0, 200.0), "cup", 0.9, 11)
        ]
        p.grasp_candidates = {11: []}
        mean_ap, _ = average_precision([rec], [p])
        assert mean_ap == Fraction(0)

    def test_wrong_category_is_a_false_positive(self):
        rec = record_one(category="cup")
        p = preds_one(category="pen")
        mean_ap, per_class = average_precision([rec], [p])
        assert per_class == {"cup": Fraction(0)}
        assert mean_ap == Fraction(0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="counts differ"):
            average_precision([record_one()], [])

    def test_empty_inputs(self):
        assert average_precision([], []) == (Fraction(0), {})


class TestMatchDetections:
    def test_greedy_by_score(self):
        rec = chain_record()
        preds = record_to_predictions(rec)
        mapping = match_detections(rec, preds)
        assert mapping == {1: 1, 2: 2, 3: 3}

    def test_low_iou_unmatched(self):
        rec = record_one()
        p = preds_one(box=(400.0, 300.0, 500.0, 400.0))
        assert match_detections(rec, p) == {}

    def test_each_gt_used_once(self):
        rec = record_one()
        p = ScenePredictions()
        p.detections = [
            ObjectDetection(AABox(100.0, 100.0, 200.0, 200.0), "cup", 0.9, 11),
            ObjectDetection(AABox(101.0, 100.0, 201.0, 200.0), "cup", 0.8, 12),
        ]
        assert match_detections(rec, p) == {11: 1}


class TestRelationMetrics:
    def test_perfect(self):
        rec = chain_record()
        m = relation_metrics([rec], [record_to_predictions(rec)])
        assert m.correct_pairs == 6 and m.gt_pairs == 6
        assert m.predicted_pairs == 6
        assert m.recall == 1.0 and m.precision == 1.0
        assert m.images_correct == 1 and m.image_accuracy == 1.0
        assert m.by_object_count == {3: (1, 1)}

    def test_missed_detection_costs_pairs_and_image(self):
        rec = chain_record()
        preds = record_to_predictions(rec)
        preds.detections = [d for d in preds.detections if d.instance_id != 3]
        preds.relations = {
            pair: probs for pair, probs in preds.relations.items() if 3 not in pair
        }
        m = relation_metrics([rec], [preds])
        assert m.gt_pairs == 6
        assert m.correct_pairs == 2  # only the (1, 2) pair in both directions
        assert m.predicted_pairs == 2
        assert m.images_correct == 0
        assert m.recall == pytest.approx(1 / 3)
        assert m.precision == 1.0

    def test_flipped_label_counts_against(self):
        rec = chain_record()
        preds = record_to_predictions(rec)
        preds.relations[(1, 2)] = (1.0, 0.0, 0.0)  # truth is above
        m = relation_metrics([rec], [preds])
        assert m.correct_pairs == 5
        assert m.images_correct == 0
        assert m.by_object_count == {3: (0, 1)}

    def test_detection_ids_can_differ_from_gt_ids(self):
        rec = record_one()
        p = ScenePredictions()
        p.detections = [
            ObjectDetection(AABox(100.0, 100.0, 200.0, 200.0), "cup", 1.0, 99)
        ]
        p.grasp_candidates = {99: []}
        m = relation_metrics([rec], [p])
        assert m.images_correct == 1  # single object, no pairs to get wrong
        assert m.gt_pairs == 0

    def test_zero_denominators(self):
        m = relation_metrics([], [])
        assert m.recall == 0.0 and m.precision == 0.0 and m.image_accuracy == 0.0


class FakeStep:
    def __init__(self, removed, order_valid=True):
        self.removed = removed
        self.order_valid = order_valid


class FakeLog:
    def __init__(self, target, steps):
        self.target = target
        self.steps = steps


class TestSequentialSuccess:
    def test_success(self):
        log = FakeLog(3, [FakeStep(1), FakeStep(3)])
        assert sequential_success(log)

    def test_no_steps(self):
        assert not sequential_success(FakeLog(3, []))

    def test_invalid_order_fails(self):
        log = FakeLog(3, [FakeStep(1, order_valid=False), FakeStep(3)])
        assert not sequential_success(log)

    def test_wrong_final_object_fails(self):
        log = FakeLog(3, [FakeStep(1), FakeStep(2)])
        assert not sequential_success(log)


class TestEvaluateReport:
    def test_perfect_report(self):
        records = [chain_record(), record_one()]
        preds = [record_to_predictions(r) for r in records]
        report = evaluate(records, preds)
        assert report.map_with_grasp == 1.0
        assert report.scenes == 2
        assert report.gt_objects == 4
        assert report.detections == 4

    def test_json_shape(self):
        records = [chain_record()]
        preds = [record_to_predictions(r) for r in records]
        data = evaluate(records, preds).to_json_dict()
        assert set(data) == {"perception", "reasoning", "counts", "thresholds"}
        assert data["perception"]["map_with_grasp"] == 1.0
        assert list(data["perception"]["per_class_ap"]) == ["box", "cup", "notebook"]
        acc = data["reasoning"]["image_accuracy"]
        assert acc == {
            "correct": 1,
            "total": 1,
            "rate": 1.0,
            "by_object_count": {"3": {"correct": 1, "total": 1, "rate": 1.0}},
        }
        assert data["counts"] == {
            "scenes": 1,
            "gt_objects": 3,
            "detections": 3,
            "gt_pairs": 6,
            "predicted_pairs": 6,
        }
        assert data["thresholds"]["iou"] == 0.5
