"""Node/edge containers shared by the web and robot models, plus JSON I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

EDGE_KINDS = ("radial", "spiral", "leg_segment", "body", "cable")


class ConstructionError(ValueError):
    """A model could not be built because an input invariant is violated."""


@dataclass(frozen=True)
class Node:
    id: int
    position: tuple[float, float, float]
    mass: float
    anchored: bool = False


@dataclass(frozen=True)
class ThreadSegment:
    """Axial spring-damper between two nodes.

    ``linear_density`` is carried so that splitting or merging segments can
    keep the lumped thread mass consistent.
    """

    endpoints: tuple[int, int]
    rest_length: float
    axial_stiffness: float
    damping: float
    kind: str
    linear_density: float = 0.0

    def __post_init__(self):
        if self.kind not in EDGE_KINDS:
            raise ConstructionError(f"unknown edge kind {self.kind!r}")
        if not self.rest_length > 0:
            raise ConstructionError(f"rest_length must be > 0, got {self.rest_length}")
        if self.endpoints[0] == self.endpoints[1]:
            raise ConstructionError(f"edge endpoints must differ: {self.endpoints}")


def node_to_dict(node: Node) -> dict:
    return {
        "id": node.id,
        "position": list(node.position),
        "mass": node.mass,
        "anchored": node.anchored,
    }


def edge_to_dict(edge: ThreadSegment) -> dict:
    return {
        "endpoints": list(edge.endpoints),
        "rest_length": edge.rest_length,
        "axial_stiffness": edge.axial_stiffness,
        "damping": edge.damping,
        "kind": edge.kind,
        "linear_density": edge.linear_density,
    }


def node_from_dict(d: dict) -> Node:
    return Node(int(d["id"]), tuple(float(v) for v in d["position"]), float(d["mass"]), bool(d["anchored"]))


def edge_from_dict(d: dict) -> ThreadSegment:
    return ThreadSegment(
        (int(d["endpoints"][0]), int(d["endpoints"][1])),
        float(d["rest_length"]),
        float(d["axial_stiffness"]),
        float(d["damping"]),
        str(d["kind"]),
        float(d.get("linear_density", 0.0)),
    )


def graph_document(nodes: Iterable[Node], edges: Iterable[ThreadSegment], **extra) -> dict:
    doc = {
        "nodes": [node_to_dict(n) for n in nodes],
        "edges": [edge_to_dict(e) for e in edges],
    }
    doc.update(extra)
    return doc


def dumps(doc: dict) -> str:
    """Stable JSON text (sorted keys, repr-exact floats)."""
    return json.dumps(doc, sort_keys=True, indent=1)


def is_connected(n_nodes: int, edges: Iterable[ThreadSegment]) -> bool:
    adj: list[list[int]] = [[] for _ in range(n_nodes)]
    for e in edges:
        a, b = e.endpoints
        adj[a].append(b)
        adj[b].append(a)
    if n_nodes == 0:
        return True
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in adj[i]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == n_nodes
