import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crouchsim.dynamics import SimConfig, settle
from crouchsim.graph import ConstructionError, Node, ThreadSegment, dumps, edge_from_dict, is_connected, node_from_dict
from crouchsim.system import web_only
from crouchsim.web import (
    PlacementError,
    PreySpec,
    WebGraph,
    WebSpec,
    attach_prey,
    build_web,
    detach_prey,
    edge_tension,
    expected_counts,
    load_node,
    radial_tensions,
)

SMALL = WebSpec(radial_count=6, spiral_count=4, hub_radius=0.05, spiral_spacing=0.05, anchor_radius=0.4,
                radial_stiffness=300.0, spiral_stiffness=150.0, pretension=5.0)


def test_default_counts():
    web = build_web(WebSpec())
    n_nodes, n_edges = expected_counts(WebSpec())
    assert len(web.nodes) == n_nodes == 8 * 12 + 1 + 8
    assert len(web.edges) == n_edges == 8 * 13 + 8 * 12


@settings(max_examples=25, deadline=None)
@given(R=st.integers(3, 12), S=st.integers(1, 8), m=st.integers(1, 3))
def test_counts_match_closed_form(R, S, m):
    spec = WebSpec(radial_count=R, spiral_count=S, subdivision=m, hub_radius=0.02, spiral_spacing=0.02,
                   anchor_radius=0.02 * S + 0.1)
    web = build_web(spec)
    assert (len(web.nodes), len(web.edges)) == expected_counts(spec)
    assert is_connected(len(web.nodes), web.edges)


def test_ring_geometry():
    spec = WebSpec()
    web = build_web(spec)
    pos = web.positions
    for k in (1, 5, 12):
        for r in range(spec.radial_count):
            p = pos[web.intersection_index[(r, k)]]
            assert math.hypot(p[0], p[1]) == pytest.approx(spec.hub_radius + (k - 1) * spec.spiral_spacing)
            assert math.atan2(p[1], p[0]) % (2 * math.pi) == pytest.approx(spec.radial_azimuth(r) % (2 * math.pi))
    assert np.all(pos[:, 2] == 0.0)
    assert all(web.nodes[i].anchored for i in web.anchor_ids)
    assert sum(n.anchored for n in web.nodes) == spec.radial_count


def test_uniform_pretension_sets_rest_lengths():
    web = build_web(SMALL)
    pos = web.positions
    for e in web.edges:
        assert edge_tension(e, pos) == pytest.approx(SMALL.pretension, rel=1e-12)


def test_balanced_web_is_in_equilibrium_when_flat():
    spec = WebSpec(pretension=60.0, spiral_pretension=4.0)
    web = build_web(spec)
    pos = web.positions
    force = np.zeros_like(pos)
    for e in web.edges:
        a, b = e.endpoints
        d = pos[b] - pos[a]
        t = edge_tension(e, pos) * d / np.linalg.norm(d)
        force[a] += t
        force[b] -= t
    free = [n.id for n in web.nodes if not n.anchored]
    assert np.max(np.abs(force[free])) < 1e-9
    radial = [edge_tension(e, pos) for e in web.edges if e.kind == "radial"]
    assert max(radial) == pytest.approx(60.0)
    assert min(radial) == pytest.approx(spec.radial_segment_tension(1))


def test_uniform_pretension_is_not_in_flat_equilibrium():
    # Each ring node feels a net inward pull 2 p sin(pi/R) from its spirals.
    web = build_web(SMALL)
    pos = web.positions
    node = web.intersection_index[(0, 2)]
    force = np.zeros(3)
    for e in web.edges:
        if node in e.endpoints:
            other = e.endpoints[1] if e.endpoints[0] == node else e.endpoints[0]
            d = pos[other] - pos[node]
            force += edge_tension(e, pos) * d / np.linalg.norm(d)
    expected = 2 * SMALL.pretension * math.sin(math.pi / SMALL.radial_count)
    assert np.linalg.norm(force) == pytest.approx(expected, rel=1e-9)


def test_thread_mass_is_conserved_in_lumping():
    web = build_web(SMALL)
    assert web.masses.sum() == pytest.approx(web.thread_mass(), rel=1e-12)


@pytest.mark.parametrize("bad", [
    dict(radial_count=2), dict(spiral_count=0), dict(anchor_radius=0.2), dict(pretension=-1.0),
    dict(spiral_pretension=50.0), dict(subdivision=0),
])
def test_invalid_specs(bad):
    with pytest.raises(ConstructionError):
        build_web(WebSpec(**bad))


def test_prey_attaches_at_spiral_midpoint():
    spec = WebSpec()
    web = build_web(spec)
    prey = PreySpec()
    loaded = attach_prey(web, prey)
    node = loaded.nodes[loaded.prey[0].node_id]
    a = web.positions[web.intersection_index[(5, 11)]]
    b = web.positions[web.intersection_index[(6, 11)]]
    assert np.allclose(node.position, 0.5 * (a + b))
    assert len(loaded.nodes) == len(web.nodes) + 1
    assert len(loaded.edges) == len(web.edges) + 1
    assert loaded.masses.sum() == pytest.approx(web.masses.sum() + prey.mass, rel=1e-12)
    # The split keeps the thread tension unchanged on both halves.
    for eid in loaded.prey[0].edge_ids:
        assert edge_tension(loaded.edges[eid], loaded.positions) == pytest.approx(spec.spiral_tension)


def test_default_prey_sits_behind_the_robot():
    spec = WebSpec()
    mid = 0.5 * (spec.radial_azimuth(5) + spec.radial_azimuth(6))
    assert math.isclose(mid, 1.5 * math.pi)


@settings(max_examples=20, deadline=None)
@given(ring=st.integers(1, 12), sector=st.integers(0, 7), frac=st.floats(0.05, 0.95), m=st.integers(1, 2))
def test_attach_detach_roundtrip(ring, sector, frac, m):
    web = build_web(WebSpec(subdivision=m))
    try:
        loaded = attach_prey(web, PreySpec(ring_index=ring, sector_index=sector, fraction=frac))
    except PlacementError:
        return  # landed exactly on a subdivision node
    back = detach_prey(loaded)
    assert back.edges == web.edges
    assert np.allclose(back.masses, web.masses, rtol=0, atol=1e-15)
    assert back.spiral_chains == web.spiral_chains


@pytest.mark.parametrize("prey", [PreySpec(ring_index=13), PreySpec(sector_index=8), PreySpec(fraction=1.0),
                                  PreySpec(mass=0.0)])
def test_bad_prey_placement(prey):
    with pytest.raises(PlacementError):
        attach_prey(build_web(WebSpec()), prey)


def test_detach_without_prey():
    with pytest.raises(PlacementError):
        detach_prey(build_web(SMALL))


def test_graph_document_roundtrip():
    web = attach_prey(build_web(SMALL), PreySpec(ring_index=2, sector_index=1))
    doc = json.loads(dumps(web.to_document()))
    assert [node_from_dict(d) for d in doc["nodes"]] == list(web.nodes)
    assert [edge_from_dict(d) for d in doc["edges"]] == list(web.edges)
    assert doc["prey"][0]["node_id"] == web.prey[0].node_id


def test_thread_segment_validation():
    with pytest.raises(ConstructionError):
        ThreadSegment((0, 0), 1.0, 1.0, 0.0, "radial")
    with pytest.raises(ConstructionError):
        ThreadSegment((0, 1), 0.0, 1.0, 0.0, "radial")
    with pytest.raises(ConstructionError):
        ThreadSegment((0, 1), 1.0, 1.0, 0.0, "rope")


# ---------------------------------------------------------------------------
# static oracles


def _hanging_spring(mass, ea, length):
    nodes = (Node(0, (0.0, 0.0, 0.0), 0.0, True), Node(1, (0.0, 0.0, -length), mass, False))
    edges = (ThreadSegment((0, 1), length, ea, 0.5, "radial"),)
    spec = WebSpec()
    return WebGraph(spec, nodes, edges, {}, 1, (0,), (0,), {})


def test_hanging_mass_extension_is_mg_over_k():
    m, ea, length = 0.3, 200.0, 0.5
    system = web_only(_hanging_spring(m, ea, length))
    state = settle(system, SimConfig(), tolerance=1e-9)
    k = ea / length
    extension = -state.positions[1, 2] - length
    assert extension == pytest.approx(m * 9.81 / k, rel=1e-6)


@pytest.mark.parametrize("spec", [SMALL, WebSpec(pretension=40.0, spiral_pretension=3.0)])
def test_hub_load_radial_tension_balance(spec):
    load = 0.5
    web = load_node(build_web(spec), 0, load)
    system = web_only(web)
    state = settle(system, SimConfig(), tolerance=1e-8)
    pos = state.positions
    tensions = radial_tensions(web, state)
    total_weight = system.masses[~system.anchored].sum() * 9.81
    sin_out = []
    for eid in web.anchor_edge_ids:
        a, b = web.edges[eid].endpoints
        d = pos[b] - pos[a]
        sin_out.append(abs(d[2]) / np.linalg.norm(d))
    oracle = total_weight / (spec.radial_count * np.mean(sin_out))
    assert np.allclose(tensions, oracle, rtol=1e-3)
    # symmetric load: hub straight down
    assert np.allclose(pos[0, :2], 0.0, atol=1e-9)
    assert pos[0, 2] < 0
