"""Seeded scene simulator: cluttered stacks of boxes, an oracle predictor
with tunable noise, and a grasp-remove trial loop.

Scenes are forests of axis-aligned boxes. A stacked box is always nested
inside its supporting box and siblings never overlap, so two boxes overlap
exactly when one is (transitively) stacked on the other, and every such
pair carries a direct above/below edge. That containment rule is load
bearing: it means any object visible to the oracle predictor has all of its
coverers visible too, so the planner's leaf estimate over detected objects
can never pick an object that secretly has something on it. Zero-noise
trials therefore always succeed.

Every random quantity is drawn from numpy Generators seeded from the trial
seed, and noise variates are drawn unconditionally before being applied, so
runs are reproducible and noise realizations are nested across noise levels
that share a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dataset import SceneGrasp, SceneObject, SceneRecord
from .execution import DepthImage
from .geometry import AABox, OrientedRect
from .perception import GraspCandidate, ObjectDetection, ScenePredictions, perceive
from .reasoning import build_graph, next_action, symmetrize

SCENE_WIDTH = 640
SCENE_HEIGHT = 480
TABLE_DEPTH_MM = 1000.0
LEVEL_STEP_MM = 40.0

CATEGORIES = (
    "apple", "banana", "bottle", "box", "can", "charger", "cup", "eraser",
    "glasses", "glue", "hammer", "headphones", "knife", "marker", "mouse",
    "notebook", "pen", "pliers", "remote", "ruler", "scissors", "screwdriver",
    "shaver", "spoon", "stapler", "tape", "toothbrush", "toothpaste",
    "umbrella", "wallet", "wrench",
)

_ROOT_COLS = 3
_ROOT_ROWS = 2
_MIN_PARENT_SIDE = 24
_MIN_CHILD_SIDE = 8


@dataclass(frozen=True)
class NoiseModel:
    """Corruption applied by the oracle predictor; all defaults are zero."""

    drop_prob: float = 0.0
    box_sigma: float = 0.0
    angle_sigma: float = 0.0
    relation_flip_prob: float = 0.0
    score_sigma: float = 0.0

    def __post_init__(self) -> None:
        for name in ("drop_prob", "relation_flip_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for name in ("box_sigma", "angle_sigma", "score_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be non-negative, got {v}")

    def to_json_dict(self) -> dict:
        return {
            "drop_prob": self.drop_prob,
            "box_sigma": self.box_sigma,
            "angle_sigma": self.angle_sigma,
            "relation_flip_prob": self.relation_flip_prob,
            "score_sigma": self.score_sigma,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "NoiseModel":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(data) - known
        if bad:
            raise ValueError(f"unknown noise fields: {sorted(bad)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class SimObject:
    instance_id: int
    category: str
    box: AABox
    grasps: tuple[OrientedRect, ...]
    level: int  # 0 = on the table


@dataclass(frozen=True)
class SimScene:
    width: int
    height: int
    objects: tuple[SimObject, ...]
    above_edges: frozenset[tuple[int, int]]  # (above_id, below_id), transitive

    def object_map(self) -> dict[int, SimObject]:
        return {o.instance_id: o for o in self.objects}

    def to_record(self) -> SceneRecord:
        objects = tuple(
            SceneObject(instance_id=o.instance_id, category=o.category, box=o.box)
            for o in self.objects
        )
        grasps = tuple(
            SceneGrasp(owner=o.instance_id, rect=g)
            for o in self.objects
            for g in o.grasps
        )
        return SceneRecord(
            width=self.width,
            height=self.height,
            objects=objects,
            grasps=grasps,
            relations=tuple(sorted(self.above_edges)),
        )

    def depth_image(self) -> DepthImage:
        """Synthetic raster: the table sits at TABLE_DEPTH_MM and each stack
        level is LEVEL_STEP_MM nearer the camera. Higher objects are painted
        last, so where boxes overlap the one on top sets the (smaller)
        depth."""
        values = np.full((self.height, self.width), TABLE_DEPTH_MM)
        for o in sorted(self.objects, key=lambda o: (o.level, o.instance_id)):
            b = o.box
            values[
                int(b.ymin) : int(b.ymax), int(b.xmin) : int(b.xmax)
            ] = TABLE_DEPTH_MM - LEVEL_STEP_MM * (o.level + 1)
        return DepthImage.from_millimeters(values)


@dataclass(frozen=True)
class TrialConfig:
    seed: int
    count_range: tuple[int, int] = (6, 9)
    target_rule: str = "random"  # or "deepest"
    max_steps: int | None = None  # default: one per object
    noise: NoiseModel = NoiseModel()
    coverage_threshold: float = 0.8
    max_stack_depth: int = 4
    top_n: int = 3

    def __post_init__(self) -> None:
        lo, hi = self.count_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad object count range ({lo}, {hi})")
        if self.max_steps is not None and self.max_steps < hi:
            raise ValueError("max_steps must cover at least one step per object")
        if not (0.0 < self.coverage_threshold <= 1.0):
            raise ValueError("coverage threshold must be in (0, 1]")
        if self.max_stack_depth < 0:
            raise ValueError("max_stack_depth must be non-negative")
        # the guaranteed worst-case capacity is one single-child chain per
        # base slot; quad-mode stacking only adds room beyond that
        slots = _ROOT_COLS * _ROOT_ROWS
        capacity = slots * (1 + self.max_stack_depth) if self.max_stack_depth else slots
        if hi > capacity:
            raise ValueError(
                f"at most {capacity} objects fit with stack depth {self.max_stack_depth}"
            )
        if self.target_rule not in ("random", "deepest"):
            raise ValueError(f"unknown target rule {self.target_rule!r}")
        if self.top_n < 1:
            raise ValueError("top_n must be at least 1")


class _Node:
    __slots__ = ("x0", "y0", "w", "h", "level", "parent", "mode", "free_quads")

    def __init__(self, x0, y0, w, h, level, parent):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.level = level
        self.parent = parent
        self.mode = None  # None until the first child: "cover" or "quad"
        self.free_quads = [0, 1, 2, 3]


def _eligible(node: _Node, max_depth: int) -> bool:
    if node.level >= max_depth or min(node.w, node.h) < _MIN_PARENT_SIDE:
        return False
    if node.mode is None:
        return True
    return node.mode == "quad" and bool(node.free_quads)


def generate_scene(seed: int, cfg: TrialConfig) -> SimScene:
    """Deterministic random scene for a seed: disjoint base objects, nested
    stacks on top of them, one to three grasps per object."""
    rng = np.random.default_rng(seed)
    lo, hi = cfg.count_range
    n = int(rng.integers(lo, hi + 1))

    slot_w = SCENE_WIDTH // _ROOT_COLS
    slot_h = SCENE_HEIGHT // _ROOT_ROWS
    if cfg.max_stack_depth == 0:
        num_roots = n
    else:
        num_roots = int(rng.integers(1, min(n, 4) + 1))
    slots = [int(s) for s in rng.choice(_ROOT_COLS * _ROOT_ROWS, size=_ROOT_COLS * _ROOT_ROWS, replace=False)]

    nodes: list[_Node] = []
    for i in range(n):
        if i < num_roots or not any(_eligible(p, cfg.max_stack_depth) for p in nodes):
            slot = slots[sum(1 for nd in nodes if nd.parent is None)]
            sx = (slot % _ROOT_COLS) * slot_w
            sy = (slot // _ROOT_COLS) * slot_h
            w = int(rng.integers(110, 171))
            h = int(rng.integers(110, 171))
            x0 = sx + int(rng.integers(8, slot_w - w - 8 + 1))
            y0 = sy + int(rng.integers(8, slot_h - h - 8 + 1))
            nodes.append(_Node(x0, y0, w, h, level=0, parent=None))
            continue
        candidates = [j for j, p in enumerate(nodes) if _eligible(p, cfg.max_stack_depth)]
        parent = nodes[candidates[int(rng.integers(0, len(candidates)))]]
        if parent.mode is None:
            parent.mode = "cover" if rng.random() < 0.4 else "quad"
        if parent.mode == "cover":
            # one large child that hides most of the parent
            cw = min(max(int(round(parent.w * rng.uniform(0.92, 0.97))), _MIN_CHILD_SIDE), parent.w - 2)
            ch = min(max(int(round(parent.h * rng.uniform(0.92, 0.97))), _MIN_CHILD_SIDE), parent.h - 2)
            x0 = parent.x0 + int(rng.integers(0, parent.w - cw + 1))
            y0 = parent.y0 + int(rng.integers(0, parent.h - ch + 1))
            parent.free_quads = []
            parent.mode = "full"
        else:
            quad = parent.free_quads.pop(int(rng.integers(0, len(parent.free_quads))))
            qw, qh = parent.w // 2, parent.h // 2
            qx0 = parent.x0 + (quad % 2) * qw
            qy0 = parent.y0 + (quad // 2) * qh
            cw = min(max(int(round(parent.w * rng.uniform(0.34, 0.46))), _MIN_CHILD_SIDE), qw - 2)
            ch = min(max(int(round(parent.h * rng.uniform(0.34, 0.46))), _MIN_CHILD_SIDE), qh - 2)
            x0 = qx0 + int(rng.integers(1, qw - cw))
            y0 = qy0 + int(rng.integers(1, qh - ch))
        nodes.append(_Node(x0, y0, cw, ch, level=parent.level + 1, parent=parent))

    objects = []
    edges = set()
    index_of = {id(nd): i for i, nd in enumerate(nodes)}
    for i, nd in enumerate(nodes):
        instance_id = i + 1
        anc = nd.parent
        while anc is not None:
            edges.add((instance_id, index_of[id(anc)] + 1))
            anc = anc.parent
        category = CATEGORIES[int(rng.integers(0, len(CATEGORIES)))]
        side = float(min(nd.w, nd.h))
        cx0 = nd.x0 + nd.w / 2.0
        cy0 = nd.y0 + nd.h / 2.0
        grasps = []
        for _ in range(int(rng.integers(1, 4))):
            grasps.append(
                OrientedRect(
                    x=cx0 + rng.uniform(-0.05, 0.05) * side,
                    y=cy0 + rng.uniform(-0.05, 0.05) * side,
                    w=side * rng.uniform(0.45, 0.6),
                    h=side * rng.uniform(0.25, 0.4),
                    theta=float(rng.uniform(-90.0, 90.0)),
                )
            )
        objects.append(
            SimObject(
                instance_id=instance_id,
                category=category,
                box=AABox(float(nd.x0), float(nd.y0), float(nd.x0 + nd.w), float(nd.y0 + nd.h)),
                grasps=tuple(grasps),
                level=nd.level,
            )
        )
    return SimScene(
        width=SCENE_WIDTH,
        height=SCENE_HEIGHT,
        objects=tuple(objects),
        above_edges=frozenset(edges),
    )


def _coverage_fraction(target: AABox, covers: Sequence[AABox]) -> float:
    clipped = []
    for c in covers:
        x0, y0 = max(c.xmin, target.xmin), max(c.ymin, target.ymin)
        x1, y1 = min(c.xmax, target.xmax), min(c.ymax, target.ymax)
        if x1 > x0 and y1 > y0:
            clipped.append((x0, y0, x1, y1))
    if not clipped:
        return 0.0
    xs = sorted({v for b in clipped for v in (b[0], b[2])})
    ys = sorted({v for b in clipped for v in (b[1], b[3])})
    covered = 0.0
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            cx = (xs[i] + xs[i + 1]) / 2.0
            cy = (ys[j] + ys[j + 1]) / 2.0
            if any(b[0] <= cx <= b[2] and b[1] <= cy <= b[3] for b in clipped):
                covered += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j])
    return covered / target.area


def visible(scene: SimScene, instance_id: int, coverage_threshold: float = 0.8) -> bool:
    """An object is visible while the boxes stacked directly above it cover
    less than ``coverage_threshold`` of its own box."""
    objects = scene.object_map()
    if instance_id not in objects:
        raise ValueError(f"no object {instance_id} in the scene")
    covers = [objects[a].box for (a, b) in scene.above_edges if b == instance_id]
    return _coverage_fraction(objects[instance_id].box, covers) < coverage_threshold


def _relation_class(scene: SimScene, a: int, b: int) -> int:
    if (a, b) in scene.above_edges:
        return 1
    if (b, a) in scene.above_edges:
        return 2
    return 0


def oracle_predict(
    scene: SimScene,
    noise: NoiseModel,
    rng: np.random.Generator,
    coverage_threshold: float = 0.8,
) -> ScenePredictions:
    """Ground truth filtered by visibility and corrupted by the noise model.

    Invisible objects are never reported. Every noise variate is drawn
    whether or not its parameter is active, keeping the stream aligned
    across noise settings for a fixed scene and generator state.
    """
    preds = ScenePredictions()
    for o in scene.objects:
        u_drop = float(rng.random())
        jitter = rng.normal(size=4)
        score_draw = float(rng.normal())
        grasp_draws = rng.normal(size=(len(o.grasps), 2))
        if not visible(scene, o.instance_id, coverage_threshold):
            continue
        if u_drop < noise.drop_prob:
            continue
        b = o.box
        x0, x1 = sorted((b.xmin + noise.box_sigma * jitter[0], b.xmax + noise.box_sigma * jitter[2]))
        y0, y1 = sorted((b.ymin + noise.box_sigma * jitter[1], b.ymax + noise.box_sigma * jitter[3]))
        if x1 <= x0:
            x1 = x0 + 1.0
        if y1 <= y0:
            y1 = y0 + 1.0
        score = min(max(1.0 - abs(noise.score_sigma * score_draw), 0.0), 1.0)
        preds.detections.append(
            ObjectDetection(
                box=AABox(x0, y0, x1, y1),
                category=o.category,
                score=score,
                instance_id=o.instance_id,
            )
        )
        cands = []
        for g, (a_draw, c_draw) in zip(o.grasps, grasp_draws):
            rect = OrientedRect(
                x=g.x, y=g.y, w=g.w, h=g.h, theta=g.theta + noise.angle_sigma * float(a_draw)
            )
            conf = min(max(1.0 - abs(noise.score_sigma * float(c_draw)), 0.0), 1.0)
            cands.append(GraspCandidate(rect=rect, confidence=conf))
        preds.grasp_candidates[o.instance_id] = cands

    det_ids = [d.instance_id for d in preds.detections]
    for a in det_ids:
        for b in det_ids:
            if a == b:
                continue
            u_flip = float(rng.random())
            alt = int(rng.integers(0, 2))
            label = _relation_class(scene, a, b)
            if u_flip < noise.relation_flip_prob:
                label = [l for l in (0, 1, 2) if l != label][alt]
            onehot = [0.0, 0.0, 0.0]
            onehot[label] = 1.0
            preds.relations[(a, b)] = tuple(onehot)
    return preds


def remove_object(scene: SimScene, instance_id: int) -> SimScene:
    """Scene with one object taken away; stack levels are recomputed from
    the surviving edges."""
    objects = scene.object_map()
    if instance_id not in objects:
        raise ValueError(f"no object {instance_id} in the scene")
    remaining = [o for o in scene.objects if o.instance_id != instance_id]
    edges = frozenset(
        (a, b) for (a, b) in scene.above_edges if a != instance_id and b != instance_id
    )
    supports: dict[int, list[int]] = {o.instance_id: [] for o in remaining}
    for (a, b) in edges:
        supports[a].append(b)
    levels: dict[int, int] = {}

    def level_of(i: int) -> int:
        if i not in levels:
            levels[i] = 1 + max((level_of(s) for s in supports[i]), default=-1)
        return levels[i]

    new_objects = tuple(replace(o, level=level_of(o.instance_id)) for o in remaining)
    return SimScene(
        width=scene.width, height=scene.height, objects=new_objects, above_edges=edges
    )


def select_target(scene: SimScene, rule: str, rng: np.random.Generator) -> int:
    ids = sorted(o.instance_id for o in scene.objects)
    if rule == "random":
        return ids[int(rng.integers(0, len(ids)))]
    if rule == "deepest":
        buried = {i: sum(1 for (a, b) in scene.above_edges if b == i) for i in ids}
        return min(ids, key=lambda i: (-buried[i], i))
    raise ValueError(f"unknown target rule {rule!r}")


@dataclass(frozen=True)
class TrialStep:
    detections: tuple[int, ...]
    action_object: int
    claimed_final: bool
    removed: int
    order_valid: bool
    target_visible: bool

    def to_json_dict(self) -> dict:
        return {
            "detections": list(self.detections),
            "action": {"object": self.action_object, "is_final_target": self.claimed_final},
            "removed": self.removed,
            "order_valid": self.order_valid,
            "target_visible": self.target_visible,
        }


@dataclass(frozen=True)
class TrialLog:
    seed: int
    target: int
    scene: SimScene
    steps: tuple[TrialStep, ...]
    reason: str  # target_removed | step_budget_exhausted | no_detections
    noise: NoiseModel = NoiseModel()

    def to_json_dict(self) -> dict:
        from .dataset import scene_to_json_dict
        from .evaluation import sequential_success

        return {
            "seed": self.seed,
            "target": self.target,
            "noise": self.noise.to_json_dict(),
            "scene": scene_to_json_dict(self.scene.to_record()),
            "steps": [s.to_json_dict() for s in self.steps],
            "outcome": {
                "reason": self.reason,
                "steps_used": len(self.steps),
                "target_removed": bool(self.steps and self.steps[-1].removed == self.target),
                "success": sequential_success(self),
            },
        }


def run_trial(cfg: TrialConfig) -> TrialLog:
    """One grasp-remove episode: predict, reason, remove, repeat.

    The loop ends when the true target is removed, the step budget runs
    out, or nothing is detected. Per-step noise draws come from a generator
    seeded by (seed, step), so a trial is one deterministic function of its
    config.
    """
    scene = generate_scene(cfg.seed, cfg)
    target = select_target(scene, cfg.target_rule, np.random.default_rng([cfg.seed, 17]))
    max_steps = cfg.max_steps if cfg.max_steps is not None else len(scene.objects)

    current = scene
    steps: list[TrialStep] = []
    reason = "step_budget_exhausted"
    for step_index in range(max_steps):
        rng = np.random.default_rng([cfg.seed, 1009, step_index])
        preds = oracle_predict(current, cfg.noise, rng, cfg.coverage_threshold)
        if not preds.detections:
            reason = "no_detections"
            break
        perceived = preds.perceived(cfg.top_n)
        labels = symmetrize(preds.relations)
        graph = build_graph([d.instance_id for d in preds.detections], labels)
        action = next_action(graph, perceived, target)
        removed = action.object_id
        steps.append(
            TrialStep(
                detections=tuple(d.instance_id for d in preds.detections),
                action_object=removed,
                claimed_final=action.is_final_target,
                removed=removed,
                order_valid=not any(b == removed for (_, b) in current.above_edges),
                target_visible=visible(current, target, cfg.coverage_threshold),
            )
        )
        current = remove_object(current, removed)
        if removed == target:
            reason = "target_removed"
            break
    return TrialLog(
        seed=cfg.seed,
        target=target,
        scene=scene,
        steps=tuple(steps),
        reason=reason,
        noise=cfg.noise,
    )
