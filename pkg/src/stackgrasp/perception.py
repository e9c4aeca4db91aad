"""Post-processing of raw detector outputs into per-object grasps.

The currency between a predictor (a file of precomputed outputs, or the
simulator's oracle) and the planning/evaluation layers is
:class:`ScenePredictions`: detections, per-object grasp candidates, and
class probabilities for every ordered object pair.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .anchors import AnchorConfig, decode_grasp, generate_anchors
from .geometry import AABox, OrientedRect, aabb_iou
from .losses import GraspPrediction, softmax2


class NoGraspError(ValueError):
    """Raised when a grasp must be selected from an empty candidate list."""


@dataclass(frozen=True)
class ObjectDetection:
    box: AABox
    category: str
    score: float
    instance_id: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score {self.score} outside [0, 1]")
        if not self.category:
            raise ValueError("empty category name")


@dataclass(frozen=True)
class GraspCandidate:
    rect: OrientedRect
    confidence: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise ValueError(f"grasp confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class PerceivedObject:
    """A detection paired with its chosen grasp (None when the predictor
    offered no candidates for the object)."""

    detection: ObjectDetection
    best_grasp: OrientedRect | None
    grasp_confidence: float


def decode_roi_grasps(
    roi: AABox,
    preds: Sequence[GraspPrediction],
    cfg: AnchorConfig = AnchorConfig(),
) -> list[GraspCandidate]:
    """Decode one ROI's raw anchor outputs into grasp candidates.

    ``preds`` must hold exactly one prediction per anchor of the grid, in
    :func:`generate_anchors` order. Confidence is the graspable softmax
    component.
    """
    anchors = generate_anchors(roi, cfg)
    if len(preds) != len(anchors):
        raise ValueError(f"expected {len(anchors)} predictions, got {len(preds)}")
    out = []
    for anchor, pred in zip(anchors, preds):
        rect = decode_grasp(anchor, pred.delta, cfg.k)
        conf = softmax2(*pred.logits)[0]
        out.append(GraspCandidate(rect=rect, confidence=conf))
    return out


def select_best_grasp(
    candidates: Sequence[GraspCandidate],
    box: AABox,
    top_n: int = 3,
) -> GraspCandidate:
    """Among the top_n most confident candidates, pick the one whose center
    is nearest the box center; ties go to higher confidence, then lower
    index."""
    if not candidates:
        raise NoGraspError("no grasp candidates to select from")
    if top_n < 1:
        raise ValueError("top_n must be at least 1")
    ranked = sorted(range(len(candidates)), key=lambda i: (-candidates[i].confidence, i))
    pool = ranked[: min(top_n, len(ranked))]
    cx, cy = box.center

    def key(i: int):
        r = candidates[i].rect
        d2 = (r.x - cx) ** 2 + (r.y - cy) ** 2
        return (d2, -candidates[i].confidence, i)

    return candidates[min(pool, key=key)]


def perceive(
    detection: ObjectDetection,
    candidates: Sequence[GraspCandidate],
    top_n: int = 3,
) -> PerceivedObject:
    """Bind a detection to its selected grasp; empty candidate lists yield a
    grasp-less perceived object rather than an error."""
    if not candidates:
        return PerceivedObject(detection=detection, best_grasp=None, grasp_confidence=0.0)
    best = select_best_grasp(candidates, detection.box, top_n)
    return PerceivedObject(
        detection=detection, best_grasp=best.rect, grasp_confidence=best.confidence
    )


def nms(
    detections: Sequence[ObjectDetection],
    iou_threshold: float = 0.3,
    score_floor: float = 0.05,
) -> list[ObjectDetection]:
    """Greedy category-aware non-maximum suppression.

    Detections below ``score_floor`` are dropped first; the rest are taken
    score-descending and each survivor suppresses same-category boxes whose
    IoU with it exceeds ``iou_threshold``. Output preserves the score order.
    """
    alive = [d for d in detections if d.score >= score_floor]
    order = sorted(range(len(alive)), key=lambda i: (-alive[i].score, i))
    kept: list[ObjectDetection] = []
    suppressed = set()
    for i in order:
        if i in suppressed:
            continue
        kept.append(alive[i])
        for j in order:
            if j == i or j in suppressed:
                continue
            if alive[j].category == alive[i].category and aabb_iou(
                alive[i].box, alive[j].box
            ) > iou_threshold:
                suppressed.add(j)
    return kept


@dataclass
class ScenePredictions:
    """Everything a predictor reports about one scene."""

    detections: list[ObjectDetection] = field(default_factory=list)
    grasp_candidates: dict[int, list[GraspCandidate]] = field(default_factory=dict)
    relations: dict[tuple[int, int], tuple[float, float, float]] = field(default_factory=dict)

    def perceived(self, top_n: int = 3) -> list[PerceivedObject]:
        return [
            perceive(d, self.grasp_candidates.get(d.instance_id, []), top_n)
            for d in self.detections
        ]


def predictions_to_json_dict(preds: ScenePredictions) -> dict:
    dets = []
    for d in sorted(preds.detections, key=lambda d: d.instance_id):
        grasps = [
            {
                "rect": [float(g.rect.x), float(g.rect.y), float(g.rect.w), float(g.rect.h), float(g.rect.theta)],
                "confidence": float(g.confidence),
            }
            for g in preds.grasp_candidates.get(d.instance_id, [])
        ]
        dets.append(
            {
                "id": d.instance_id,
                "category": d.category,
                "bbox": [float(v) for v in d.box.as_tuple()],
                "score": float(d.score),
                "grasps": grasps,
            }
        )
    relations = [
        {"pair": [a, b], "probs": [float(p) for p in probs]}
        for (a, b), probs in sorted(preds.relations.items())
    ]
    return {"detections": dets, "relations": relations}


def serialize_predictions(preds: ScenePredictions) -> str:
    return json.dumps(predictions_to_json_dict(preds), indent=2) + "\n"


def parse_predictions(text: str) -> ScenePredictions:
    """Parse the predictions JSON schema; raises ValueError with the JSON
    path of the offending field."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"not valid JSON: {e}") from e
    out = ScenePredictions()
    if not isinstance(data, dict) or "detections" not in data:
        raise ValueError("detections: missing")
    seen_ids = set()
    for i, d in enumerate(data["detections"]):
        where = f"detections[{i}]"
        try:
            instance_id = int(d["id"])
            box = AABox(*[float(v) for v in d["bbox"]])
            det = ObjectDetection(
                box=box,
                category=str(d["category"]),
                score=float(d.get("score", 1.0)),
                instance_id=instance_id,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"{where}: {e}") from e
        if instance_id in seen_ids:
            raise ValueError(f"{where}: duplicate id {instance_id}")
        seen_ids.add(instance_id)
        out.detections.append(det)
        grasps = []
        for j, g in enumerate(d.get("grasps", [])):
            try:
                rect = OrientedRect(*[float(v) for v in g["rect"]])
                grasps.append(
                    GraspCandidate(rect=rect, confidence=float(g.get("confidence", 1.0)))
                )
            except (KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{where}.grasps[{j}]: {e}") from e
        out.grasp_candidates[instance_id] = grasps
    for i, r in enumerate(data.get("relations", [])):
        where = f"relations[{i}]"
        try:
            a, b = (int(v) for v in r["pair"])
            probs = tuple(float(v) for v in r["probs"])
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"{where}: {e}") from e
        if len(probs) != 3:
            raise ValueError(f"{where}: need 3 probabilities, got {len(probs)}")
        if a not in seen_ids or b not in seen_ids:
            raise ValueError(f"{where}: pair ({a}, {b}) references unknown detection")
        if (a, b) in out.relations:
            raise ValueError(f"{where}: duplicate pair ({a}, {b})")
        out.relations[(a, b)] = probs
    return out
