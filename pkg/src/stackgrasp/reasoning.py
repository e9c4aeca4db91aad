"""Stacking-order reasoning: turn pairwise relation probabilities into a
directed acyclic graph and pick the next object to grasp.

Relation classes for an ordered pair (a, b): 0 = none, 1 = a above b,
2 = a below b. Graph edges run from the object on top to the object under
it, so a "leaf" (nothing stacked on it) has no incoming edges and is safe
to remove.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .perception import PerceivedObject

RELATION_NONE = 0
RELATION_ABOVE = 1
RELATION_BELOW = 2


class EmptySceneError(ValueError):
    """Raised when an action is requested with no detections at all."""


def symmetrize(
    relations: Mapping[tuple[int, int], Sequence[float]],
) -> dict[tuple[int, int], tuple[int, float]]:
    """Fuse the two ordered predictions of each pair into one label.

    For i < j the joint score of each consistent labeling averages the two
    directions: none = (p_ij[0] + p_ji[0]) / 2, i-above-j =
    (p_ij[1] + p_ji[2]) / 2, i-below-j = (p_ij[2] + p_ji[1]) / 2. The argmax
    wins; exact ties prefer none, then above, then below. Returns
    {(i, j): (label, confidence)} keyed with i < j.
    """
    for (a, b) in relations:
        if (b, a) not in relations:
            raise ValueError(f"pair ({a}, {b}) present without its reverse")
    out: dict[tuple[int, int], tuple[int, float]] = {}
    for (a, b) in relations:
        if a > b:
            continue
        p_ij = relations[(a, b)]
        p_ji = relations[(b, a)]
        joint = (
            (p_ij[0] + p_ji[0]) / 2.0,
            (p_ij[1] + p_ji[2]) / 2.0,
            (p_ij[2] + p_ji[1]) / 2.0,
        )
        label = max(range(3), key=lambda k: (joint[k], -k))
        out[(a, b)] = (label, joint[label])
    return out


@dataclass(frozen=True)
class ManipulationGraph:
    """Above->below edges with the confidence that survived symmetrization.

    ``deleted_edges`` records cycle repairs: whenever a directed cycle was
    found, its lowest-confidence edge was dropped.
    """

    nodes: frozenset[int]
    edges: dict[tuple[int, int], float]
    deleted_edges: tuple[tuple[int, int, float], ...] = ()

    def edge_list(self) -> list[tuple[int, int, float]]:
        return [(a, b, c) for (a, b), c in sorted(self.edges.items())]


def _find_cycle(nodes, edges) -> list[tuple[int, int]] | None:
    # Iterative DFS over sorted adjacency; returns the edge list of one
    # directed cycle, or None.
    adj: dict[int, list[int]] = {n: [] for n in nodes}
    for (a, b) in sorted(edges):
        adj[a].append(b)
    color = {n: 0 for n in nodes}  # 0 new, 1 on stack, 2 done
    parent_edge: dict[int, tuple[int, int]] = {}
    for start in sorted(nodes):
        if color[start] != 0:
            continue
        stack = [(start, iter(adj[start]))]
        color[start] = 1
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == 1:
                    # walk parents from node back to nxt
                    cycle = [(node, nxt)]
                    cur = node
                    while cur != nxt:
                        edge = parent_edge[cur]
                        cycle.append(edge)
                        cur = edge[0]
                    cycle.reverse()
                    return cycle
                if color[nxt] == 0:
                    color[nxt] = 1
                    parent_edge[nxt] = (node, nxt)
                    stack.append((nxt, iter(adj[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = 2
                stack.pop()
    return None


def build_graph(
    nodes: Sequence[int],
    labels: Mapping[tuple[int, int], tuple[int, float]],
) -> ManipulationGraph:
    """Build the acyclic stacking graph from symmetrized labels.

    Any directed cycle is repaired by deleting its lowest-confidence edge
    (ties broken by edge endpoints); repairs repeat until acyclic and are
    reported in ``deleted_edges``.
    """
    node_set = frozenset(int(n) for n in nodes)
    edges: dict[tuple[int, int], float] = {}
    for (i, j), (label, conf) in labels.items():
        if i not in node_set or j not in node_set:
            raise ValueError(f"labeled pair ({i}, {j}) references unknown node")
        if label == RELATION_ABOVE:
            edges[(i, j)] = conf
        elif label == RELATION_BELOW:
            edges[(j, i)] = conf
    deleted = []
    while True:
        cycle = _find_cycle(node_set, edges)
        if cycle is None:
            break
        victim = min(cycle, key=lambda e: (edges[e], e))
        deleted.append((victim[0], victim[1], edges[victim]))
        del edges[victim]
    return ManipulationGraph(nodes=node_set, edges=edges, deleted_edges=tuple(deleted))


def leaves(g: ManipulationGraph) -> set[int]:
    """Nodes with nothing stacked on them (no incoming above-edge)."""
    covered = {b for (_, b) in g.edges}
    return set(g.nodes) - covered


def ancestors(g: ManipulationGraph, node: int) -> set[int]:
    """All nodes stacked (transitively) above ``node``."""
    incoming: dict[int, list[int]] = {n: [] for n in g.nodes}
    for (a, b) in g.edges:
        incoming[b].append(a)
    seen: set[int] = set()
    frontier = [node]
    while frontier:
        cur = frontier.pop()
        for up in incoming[cur]:
            if up not in seen:
                seen.add(up)
                frontier.append(up)
    return seen


@dataclass(frozen=True)
class GraspAction:
    object_id: int
    is_final_target: bool


def _best(ids, scores) -> int:
    return min(ids, key=lambda i: (-scores[i], i))


def next_action(
    g: ManipulationGraph,
    detections: Sequence[PerceivedObject],
    target: int | str | None,
) -> GraspAction:
    """Choose the next object to grasp.

    If the target is detected: grasp it when nothing is stacked on it,
    otherwise grasp the best-scoring leaf among the objects stacked above
    it. If the target is not detected (hidden, or absent): grasp the
    best-scoring leaf overall to uncover more of the scene. Score ties go
    to the lower instance id.
    """
    if not detections:
        raise EmptySceneError("no detections to act on")
    scores = {p.detection.instance_id: p.detection.score for p in detections}

    target_id: int | None = None
    if isinstance(target, int):
        target_id = target if target in scores else None
    elif isinstance(target, str):
        matches = [
            p.detection.instance_id
            for p in detections
            if p.detection.category == target
        ]
        if matches:
            target_id = _best(matches, scores)

    if target_id is None:
        free = leaves(g) & set(scores)
        if not free:
            free = set(scores)
        return GraspAction(object_id=_best(free, scores), is_final_target=False)

    above = ancestors(g, target_id) & set(scores)
    if not above:
        return GraspAction(object_id=target_id, is_final_target=True)
    # leaves of the subgraph induced on the objects above the target
    blocked = {b for (a, b) in g.edges if a in above and b in above}
    sub_leaves = above - blocked
    return GraspAction(object_id=_best(sub_leaves, scores), is_final_target=False)
