import itertools

import numpy as np
import pytest

from bpsignal import (GlobalPhase, Junction, Network, Phase, build_grid_network,
                      service_matrix, validate_network)
from bpsignal.network import SIDES


def test_single_junction_grid():
    net = build_grid_network(1, 1, 10)
    assert len(net.junctions) == 1
    j = net.junctions[0]
    assert len(j.inputs) == 4
    assert len(j.phases) == 4
    assert len(j.movements()) == 12  # each approach serves 3 directions
    assert all(net.saturation[m] == 10 for m in j.movements())
    # every output leaves the grid
    assert set(j.movements()) == net.exit_sinks


def test_full_scale_grid_dimensions():
    net = build_grid_network(21, 21, 10)
    assert len(net.junctions) == 441
    interior = [j for j in net.junctions
                if not any(m in net.exit_sinks for m in j.movements())]
    assert len(interior) == 19 * 19


def test_1x2_shared_node_wiring():
    # Hand enumeration: junction 0 approaches are nodes 0..3 (N,E,S,W) and
    # junction 1 approaches are 4..7, so j0's east output must be node 7
    # (j1's west approach) and j1's west output must be node 1.
    net = build_grid_network(1, 2, 10)
    j0, j1 = net.junctions
    assert j0.inputs == (0, 1, 2, 3)
    assert j1.inputs == (4, 5, 6, 7)
    east = SIDES.index("E")
    west = SIDES.index("W")
    assert j0.outputs[east] == j1.inputs[west] == 7
    assert j1.outputs[west] == j0.inputs[east] == 1
    # 8 approaches + 6 boundary sinks
    assert len(net.nodes) == 14


def test_interior_wiring_symmetry():
    net = build_grid_network(4, 3, 10)
    inputs_of = {}
    for j in net.junctions:
        for n in j.inputs:
            inputs_of.setdefault(n, set()).add(j.id)
    for j in net.junctions:
        for n in j.outputs:
            if n in inputs_of:
                owners = inputs_of[n]
                assert len(owners) == 1 and j.id not in owners


@pytest.mark.parametrize("rows,cols", [(1, 1), (1, 2), (2, 2), (3, 5)])
def test_partition_property(rows, cols):
    net = build_grid_network(rows, cols, 10)
    assert validate_network(net) == []
    input_count = {n: 0 for n in net.nodes}
    output_count = {n: 0 for n in net.nodes}
    for j in net.junctions:
        for n in j.inputs:
            input_count[n] += 1
        for n in j.outputs:
            output_count[n] += 1
    sink_nodes = {b for (_a, b) in net.exit_sinks}
    for n in net.nodes:
        assert output_count[n] <= 1
        if n in sink_nodes:
            assert input_count[n] == 0 and output_count[n] == 1
        else:
            assert input_count[n] == 1


def test_phase_a_matches_straight_plus_right_structure():
    net = build_grid_network(1, 1, 10)
    sm = service_matrix(net, GlobalPhase({0: 0}))
    assert len(sm) == 4
    assert set(sm.values()) == {10}
    kinds = {net.movement_kinds[m] for m in sm}
    assert kinds == {"straight", "right"}
    # left phases serve exactly the two opposing protected lefts
    for left_phase in (2, 3):
        sm_left = service_matrix(net, GlobalPhase({0: left_phase}))
        assert len(sm_left) == 2
        assert {net.movement_kinds[m] for m in sm_left} == {"left"}


def test_service_matrix_support_exhaustive_2x2():
    net = build_grid_network(2, 2, 7)
    ids = [j.id for j in net.junctions]
    for combo in itertools.product(range(4), repeat=4):
        gp = GlobalPhase(dict(zip(ids, combo)))
        sm = service_matrix(net, gp)
        expected = set()
        for j, p in zip(net.junctions, combo):
            expected |= j.phases[p].allowed_movements
        assert set(sm) == expected
        assert all(sm[m] == net.saturation[m] for m in sm)


def test_service_matrix_1x2_straight_phases():
    net = build_grid_network(1, 2, 10)
    gp = GlobalPhase({0: 0, 1: 0})
    sm = service_matrix(net, gp)
    expected = (net.junctions[0].phases[0].allowed_movements
                | net.junctions[1].phases[0].allowed_movements)
    assert set(sm) == expected
    assert len(sm) == 8


def test_service_matrix_invalid_phase_index():
    net = build_grid_network(1, 1, 10)
    with pytest.raises(ValueError):
        service_matrix(net, GlobalPhase({0: 4}))


def test_validate_detects_partition_violation():
    net = build_grid_network(1, 2, 10)
    j0, j1 = net.junctions
    # make node 0 (an input of j0) also an input of j1
    bad = Network(
        nodes=net.nodes,
        junctions=(j0, Junction(id=j1.id, inputs=(0,) + j1.inputs[1:],
                                outputs=j1.outputs, phases=j1.phases)),
        saturation=net.saturation,
        exit_sinks=net.exit_sinks,
    )
    problems = validate_network(bad)
    assert any("partition violated" in p and "node 0" in p for p in problems)


def test_validate_detects_missing_saturation():
    net = build_grid_network(1, 1, 10)
    sat = dict(net.saturation)
    missing = next(iter(sat))
    del sat[missing]
    bad = Network(nodes=net.nodes, junctions=net.junctions, saturation=sat,
                  exit_sinks=net.exit_sinks)
    problems = validate_network(bad)
    assert any("missing saturation" in p for p in problems)


def test_validate_detects_empty_phase_list_and_overlap():
    j = Junction(id=0, inputs=(0, 1), outputs=(1, 2), phases=())
    bad = Network(nodes=(0, 1, 2), junctions=(j,), saturation={}, exit_sinks=frozenset())
    problems = validate_network(bad)
    assert any("no phases" in p for p in problems)
    assert any("both input and output" in p for p in problems)


def test_json_round_trip():
    net = build_grid_network(2, 3, 10)
    clone = Network.from_json(net.to_json())
    assert clone.nodes == net.nodes
    assert clone.saturation == net.saturation
    assert clone.exit_sinks == net.exit_sinks
    assert clone.movement_kinds == net.movement_kinds
    assert len(clone.junctions) == len(net.junctions)
    for a, b in zip(clone.junctions, net.junctions):
        assert a.id == b.id
        assert a.inputs == b.inputs
        assert a.outputs == b.outputs
        assert [p.allowed_movements for p in a.phases] == \
               [p.allowed_movements for p in b.phases]
    assert validate_network(clone) == []
