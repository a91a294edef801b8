"""Orb-web model: a pretensioned mass-spring-damper graph of radial and spiral threads.

Rings are concentric polygons indexed from 1 at the hub outward. Radials are
indexed from 0, counter-clockwise starting at ``azimuth_offset``; sector ``s``
is the wedge between radial ``s`` and radial ``s + 1`` (mod ``radial_count``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import ConstructionError, Node, ThreadSegment, graph_document, is_connected


class PlacementError(ValueError):
    """A prey or foot location does not exist on the web."""


@dataclass(frozen=True)
class WebSpec:
    radial_count: int = 8
    spiral_count: int = 12
    hub_radius: float = 0.04
    spiral_spacing: float = 0.03
    anchor_radius: float = 0.45
    radial_stiffness: float = 400.0
    spiral_stiffness: float = 200.0
    thread_linear_density: float = 0.01
    pretension: float = 10.0
    edge_damping: float = 0.5
    spiral_pretension: float | None = None
    azimuth_offset: float | None = None
    subdivision: int = 1

    def ring_radius(self, ring: int) -> float:
        return self.hub_radius + (ring - 1) * self.spiral_spacing

    def radial_azimuth(self, radial: int) -> float:
        offset = math.pi / self.radial_count if self.azimuth_offset is None else self.azimuth_offset
        return offset + 2.0 * math.pi * radial / self.radial_count

    def radial_segment_tension(self, ring: int) -> float:
        """Build tension of the radial segment running inward from ``ring`` (``spiral_count + 1`` = anchor).

        With ``spiral_pretension`` unset every thread carries ``pretension``.
        Otherwise the radials are graded so that each ring node of the flat
        web is in exact equilibrium: every ring adds the inward pull
        2*spiral_pretension*sin(pi/radial_count) of its two spiral neighbours,
        and the anchor-adjacent segments carry ``pretension``.
        """
        if self.spiral_pretension is None:
            return self.pretension
        step = 2.0 * self.spiral_pretension * math.sin(math.pi / self.radial_count)
        return self.pretension - (self.spiral_count + 1 - ring) * step

    @property
    def spiral_tension(self) -> float:
        return self.pretension if self.spiral_pretension is None else self.spiral_pretension

    def validate(self) -> None:
        if self.radial_count < 3:
            raise ConstructionError(f"radial_count must be >= 3, got {self.radial_count}")
        if self.spiral_count < 1:
            raise ConstructionError(f"spiral_count must be >= 1, got {self.spiral_count}")
        if self.subdivision < 1:
            raise ConstructionError(f"subdivision must be >= 1, got {self.subdivision}")
        if not self.hub_radius > 0:
            raise ConstructionError(f"hub_radius must be > 0, got {self.hub_radius}")
        if not self.spiral_spacing > 0:
            raise ConstructionError(f"spiral_spacing must be > 0, got {self.spiral_spacing}")
        outer = self.hub_radius + self.spiral_count * self.spiral_spacing
        if not outer < self.anchor_radius:
            raise ConstructionError(
                f"hub_radius + spiral_count*spiral_spacing = {outer} must be < anchor_radius = {self.anchor_radius}"
            )
        for name in ("radial_stiffness", "spiral_stiffness", "thread_linear_density", "edge_damping", "pretension"):
            if getattr(self, name) < 0:
                raise ConstructionError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.spiral_pretension is not None:
            if self.spiral_pretension < 0:
                raise ConstructionError(f"spiral_pretension must be >= 0, got {self.spiral_pretension}")
            inner = self.radial_segment_tension(1)
            if inner < 0:
                raise ConstructionError(
                    f"graded radial tension at the hub would be {inner:.4g} N < 0; raise pretension or lower "
                    "spiral_pretension"
                )


@dataclass(frozen=True)
class PreySpec:
    mass: float = 0.23
    ring_index: int = 11
    sector_index: int = 5
    fraction: float = 0.5

    def validate(self) -> None:
        if not self.mass >= 0.001:
            raise PlacementError(f"prey mass must be >= 0.001 kg, got {self.mass}")
        if not 0.0 < self.fraction < 1.0:
            raise PlacementError(f"fraction must be in (0, 1), got {self.fraction}")


@dataclass(frozen=True)
class AttachedPrey:
    node_id: int
    spec: PreySpec
    edge_ids: tuple[int, int]
    original_edge: ThreadSegment


@dataclass(frozen=True)
class WebGraph:
    spec: WebSpec
    nodes: tuple[Node, ...]
    edges: tuple[ThreadSegment, ...]
    intersection_index: dict
    hub_id: int
    anchor_ids: tuple[int, ...]
    anchor_edge_ids: tuple[int, ...]
    spiral_chains: dict
    prey: tuple[AttachedPrey, ...] = field(default=())

    @property
    def positions(self) -> np.ndarray:
        return np.array([n.position for n in self.nodes], dtype=float)

    @property
    def masses(self) -> np.ndarray:
        return np.array([n.mass for n in self.nodes], dtype=float)

    def thread_mass(self) -> float:
        pos = self.positions
        return float(sum(e.linear_density * np.linalg.norm(pos[e.endpoints[1]] - pos[e.endpoints[0]]) for e in self.edges))

    def to_document(self) -> dict:
        return graph_document(
            self.nodes,
            self.edges,
            hub_id=self.hub_id,
            anchor_ids=list(self.anchor_ids),
            intersections=[[r, k, nid] for (r, k), nid in sorted(self.intersection_index.items())],
            prey=[{"node_id": p.node_id, "mass": p.spec.mass, "ring_index": p.spec.ring_index,
                   "sector_index": p.spec.sector_index, "fraction": p.spec.fraction} for p in self.prey],
        )


def expected_counts(spec: WebSpec) -> tuple[int, int]:
    """Closed-form (node count, edge count) for a freshly built web."""
    R, S, m = spec.radial_count, spec.spiral_count, spec.subdivision
    radial_edges = R * (S + 1) * m
    spiral_edges = R * S * m
    nodes = R * S + 1 + R + R * (S + 1) * (m - 1) + R * S * (m - 1)
    return nodes, radial_edges + spiral_edges


def _rest_length(length: float, stiffness: float, tension: float) -> float:
    if stiffness == 0.0:
        return length
    return length / (1.0 + tension / stiffness)


def build_web(spec: WebSpec) -> WebGraph:
    """Discretize ``spec`` into a flat web lying in the z = 0 plane.

    Every edge gets the rest length that makes it carry its build tension
    (``spec.pretension`` everywhere unless ``spec.spiral_pretension`` asks for
    a balanced web, see :meth:`WebSpec.radial_segment_tension`).
    """
    spec.validate()
    R, S, m = spec.radial_count, spec.spiral_count, spec.subdivision
    positions: list[np.ndarray] = [np.zeros(3)]
    anchored: list[bool] = [False]
    index: dict[tuple[int, int], int] = {}
    for k in range(1, S + 1):
        rk = spec.ring_radius(k)
        for r in range(R):
            th = spec.radial_azimuth(r)
            index[(r, k)] = len(positions)
            positions.append(np.array([rk * math.cos(th), rk * math.sin(th), 0.0]))
            anchored.append(False)
    anchors = []
    for r in range(R):
        th = spec.radial_azimuth(r)
        anchors.append(len(positions))
        positions.append(np.array([spec.anchor_radius * math.cos(th), spec.anchor_radius * math.sin(th), 0.0]))
        anchored.append(True)

    edges: list[tuple[int, int, float, str, float]] = []  # (a, b, EA, kind, tension)

    def chain(a: int, b: int, stiffness: float, kind: str, tension: float) -> list[int]:
        ids = [a]
        for s in range(1, m):
            ids.append(len(positions))
            positions.append(positions[a] + (positions[b] - positions[a]) * (s / m))
            anchored.append(False)
        ids.append(b)
        first = len(edges)
        for p, q in zip(ids[:-1], ids[1:]):
            edges.append((p, q, stiffness, kind, tension))
        return list(range(first, len(edges)))

    anchor_edges = []
    for r in range(R):
        path = [0] + [index[(r, k)] for k in range(1, S + 1)] + [anchors[r]]
        for ring, (a, b) in enumerate(zip(path[:-1], path[1:]), start=1):
            ids = chain(a, b, spec.radial_stiffness, "radial", spec.radial_segment_tension(ring))
        anchor_edges.append(ids[-1])
    spirals = {}
    for k in range(1, S + 1):
        for r in range(R):
            spirals[(k, r)] = tuple(chain(index[(r, k)], index[((r + 1) % R, k)], spec.spiral_stiffness, "spiral",
                                          spec.spiral_tension))

    pos = np.array(positions)
    lumped = np.zeros(len(pos))
    segments = []
    for a, b, ea, kind, tension in edges:
        length = float(np.linalg.norm(pos[b] - pos[a]))
        segments.append(ThreadSegment((a, b), _rest_length(length, ea, tension), ea, spec.edge_damping,
                                      kind, spec.thread_linear_density))
        lumped[a] += 0.5 * spec.thread_linear_density * length
        lumped[b] += 0.5 * spec.thread_linear_density * length

    nodes = tuple(Node(i, tuple(float(c) for c in pos[i]), float(lumped[i]), anchored[i]) for i in range(len(pos)))
    if not is_connected(len(nodes), segments):
        raise ConstructionError("web graph is not connected")
    return WebGraph(spec, nodes, tuple(segments), index, 0, tuple(anchors), tuple(anchor_edges), spirals)


def attach_prey(web: WebGraph, prey: PreySpec) -> WebGraph:
    """Split the spiral thread at (ring, sector) and hang the prey mass on the new node."""
    prey.validate()
    spec = web.spec
    if not 1 <= prey.ring_index <= spec.spiral_count:
        raise PlacementError(f"ring_index {prey.ring_index} outside 1..{spec.spiral_count}")
    if not 0 <= prey.sector_index < spec.radial_count:
        raise PlacementError(f"sector_index {prey.sector_index} outside 0..{spec.radial_count - 1}")
    chain_ids = web.spiral_chains[(prey.ring_index, prey.sector_index)]
    pos = web.positions
    lengths = [float(np.linalg.norm(pos[web.edges[i].endpoints[1]] - pos[web.edges[i].endpoints[0]])) for i in chain_ids]
    target = prey.fraction * sum(lengths)
    acc = 0.0
    for eid, length in zip(chain_ids, lengths):
        if target < acc + length or eid == chain_ids[-1]:
            break
        acc += length
    local = (target - acc) / length
    if not 0.0 < local < 1.0:
        raise PlacementError("prey would coincide with an existing node; choose another fraction")

    edge = web.edges[eid]
    a, b = edge.endpoints
    new_id = len(web.nodes)
    p_new = pos[a] + local * (pos[b] - pos[a])
    rho = edge.linear_density
    nodes = list(web.nodes)
    nodes[a] = replace(nodes[a], mass=nodes[a].mass - 0.5 * rho * (1.0 - local) * length)
    nodes[b] = replace(nodes[b], mass=nodes[b].mass - 0.5 * rho * local * length)
    nodes.append(Node(new_id, tuple(float(c) for c in p_new), prey.mass + 0.5 * rho * length, False))

    first = replace(edge, endpoints=(a, new_id), rest_length=edge.rest_length * local)
    second = replace(edge, endpoints=(new_id, b), rest_length=edge.rest_length * (1.0 - local))
    edges = list(web.edges)
    edges[eid] = first
    edges.append(second)
    second_id = len(edges) - 1

    chains = dict(web.spiral_chains)
    old = list(chain_ids)
    at = old.index(eid)
    chains[(prey.ring_index, prey.sector_index)] = tuple(old[: at + 1] + [second_id] + old[at + 1:])
    attached = AttachedPrey(new_id, prey, (eid, second_id), edge)
    return replace(web, nodes=tuple(nodes), edges=tuple(edges), spiral_chains=chains, prey=web.prey + (attached,))


def detach_prey(web: WebGraph) -> WebGraph:
    """Inverse of the most recent :func:`attach_prey`: merge the split thread back."""
    if not web.prey:
        raise PlacementError("web carries no prey")
    last = web.prey[-1]
    first_id, second_id = last.edge_ids
    if last.node_id != len(web.nodes) - 1 or second_id != len(web.edges) - 1:
        raise PlacementError("only the most recently attached prey can be detached")
    edge = last.original_edge
    a, b = edge.endpoints
    pos = web.positions
    la = float(np.linalg.norm(pos[last.node_id] - pos[a]))
    lb = float(np.linalg.norm(pos[b] - pos[last.node_id]))
    rho = edge.linear_density
    nodes = list(web.nodes[:-1])
    nodes[a] = replace(nodes[a], mass=nodes[a].mass + 0.5 * rho * lb)
    nodes[b] = replace(nodes[b], mass=nodes[b].mass + 0.5 * rho * la)
    edges = list(web.edges[:-1])
    edges[first_id] = edge
    chains = dict(web.spiral_chains)
    key = (last.spec.ring_index, last.spec.sector_index)
    chains[key] = tuple(i for i in chains[key] if i != second_id)
    return replace(web, nodes=tuple(nodes), edges=tuple(edges), spiral_chains=chains, prey=web.prey[:-1])


def load_node(web: WebGraph, node_id: int, mass: float) -> WebGraph:
    """Return a copy of ``web`` with ``mass`` added to one node (e.g. a hub load)."""
    nodes = list(web.nodes)
    nodes[node_id] = replace(nodes[node_id], mass=nodes[node_id].mass + mass)
    return replace(web, nodes=tuple(nodes))


def edge_tension(edge: ThreadSegment, positions: np.ndarray) -> float:
    a, b = edge.endpoints
    length = float(np.linalg.norm(positions[b] - positions[a]))
    return edge.axial_stiffness * (length - edge.rest_length) / edge.rest_length


def radial_tensions(web: WebGraph, state) -> np.ndarray:
    """Static tension (N) in the anchor-adjacent segment of every radial.

    ``state`` is a :class:`~crouchsim.dynamics.SystemState` or a bare
    ``(n, 3)`` position array whose first rows are the web nodes.
    Compression comes back negative.
    """
    positions = np.asarray(getattr(state, "positions", state), dtype=float)
    return np.array([edge_tension(web.edges[i], positions) for i in web.anchor_edge_ids])
