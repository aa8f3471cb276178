"""Static model of a signalized intersection network.

Nodes are lanes holding queued vehicles. Each intersection is a junction: a
server owning a set of movements (input node, output node) and a finite list
of feasible phases. Activating a phase serves every movement it allows at
that movement's saturation rate; all other movements get zero service.

Grid convention
---------------
``build_grid_network`` lays out ``rows x cols`` four-way intersections. Every
junction has four approach (input) nodes and four output nodes, one per
compass side in the fixed order N, E, S, W. An approach on side X carries the
traffic that entered the intersection area from side X; driving directions
follow from that (the N approach heads south, so its left turn exits east).
The four phases are:

    0: straight + right turns for the N and S approaches
    1: straight + right turns for the E and W approaches
    2: protected left turns for the N and S approaches
    3: protected left turns for the E and W approaches

An interior junction's output toward a neighbor *is* that neighbor's
approach node on the facing side. Outputs on the grid boundary point at
dedicated sink nodes; movements into a sink are listed in ``exit_sinks`` and
vehicles transferred on them leave the network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

Movement = tuple[int, int]

SIDES = ("N", "E", "S", "W")
STRAIGHT_OUT = {"N": "S", "E": "W", "S": "N", "W": "E"}
LEFT_OUT = {"N": "E", "E": "S", "S": "W", "W": "N"}
RIGHT_OUT = {"N": "W", "E": "N", "S": "E", "W": "S"}

TURN_KINDS = ("straight", "left", "right")


@dataclass(frozen=True)
class Phase:
    """A set of movements granted right-of-way simultaneously."""

    allowed_movements: frozenset[Movement]

    def sorted_movements(self) -> list[Movement]:
        return sorted(self.allowed_movements)


@dataclass(frozen=True)
class Junction:
    """One intersection: its approach nodes, output nodes and phase list."""

    id: int
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]
    phases: tuple[Phase, ...]

    def movements(self) -> list[Movement]:
        """All movements referenced by some phase, in sorted order."""
        pairs: set[Movement] = set()
        for ph in self.phases:
            pairs |= ph.allowed_movements
        return sorted(pairs)


@dataclass
class Network:
    """Immutable-by-convention network description.

    ``saturation`` maps each movement to its per-slot service rate when the
    movement is active. ``exit_sinks`` holds the movements whose destination
    lies outside the network. ``movement_kinds`` is optional turn metadata
    ("straight" / "left" / "right") used to apply per-direction routing rates;
    grid networks always carry it.
    """

    nodes: tuple[int, ...]
    junctions: tuple[Junction, ...]
    saturation: dict[Movement, int]
    exit_sinks: frozenset[Movement]
    movement_kinds: dict[Movement, str] = field(default_factory=dict)

    def movements(self) -> list[Movement]:
        out: list[Movement] = []
        for j in self.junctions:
            out.extend(j.movements())
        return out

    def junction_of_input(self, node: int) -> Junction | None:
        for j in self.junctions:
            if node in j.inputs:
                return j
        return None

    def approach_nodes(self) -> list[int]:
        """Nodes that are an input of some junction (sinks excluded)."""
        seen: list[int] = []
        for j in self.junctions:
            seen.extend(j.inputs)
        return sorted(seen)

    def to_json(self) -> str:
        doc = {
            "nodes": list(self.nodes),
            "junctions": [
                {
                    "id": j.id,
                    "inputs": list(j.inputs),
                    "outputs": list(j.outputs),
                    "phases": [[list(m) for m in ph.sorted_movements()] for ph in j.phases],
                }
                for j in self.junctions
            ],
            "saturation": [[a, b, s] for (a, b), s in sorted(self.saturation.items())],
            "exit_sinks": [list(m) for m in sorted(self.exit_sinks)],
            "movement_kinds": [[a, b, k] for (a, b), k in sorted(self.movement_kinds.items())],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Network":
        doc = json.loads(text)
        junctions = tuple(
            Junction(
                id=j["id"],
                inputs=tuple(j["inputs"]),
                outputs=tuple(j["outputs"]),
                phases=tuple(
                    Phase(frozenset((a, b) for a, b in ph)) for ph in j["phases"]
                ),
            )
            for j in doc["junctions"]
        )
        return cls(
            nodes=tuple(doc["nodes"]),
            junctions=junctions,
            saturation={(a, b): s for a, b, s in doc["saturation"]},
            exit_sinks=frozenset((a, b) for a, b in doc["exit_sinks"]),
            movement_kinds={(a, b): k for a, b, k in doc.get("movement_kinds", [])},
        )


@dataclass(frozen=True)
class GlobalPhase:
    """One local phase index per junction."""

    per_junction: dict[int, int]

    def local(self, junction_id: int) -> int:
        return self.per_junction[junction_id]


def build_grid_network(rows: int, cols: int, saturation_rate: int) -> Network:
    """Build the rows x cols grid of four-way intersections.

    Every junction gets 4 approach nodes, 4 outputs, 12 movements (each
    approach serves straight, left and right) and the 4 phases described in
    the module docstring, all at the same ``saturation_rate``.
    """
    if rows < 1 or cols < 1 or saturation_rate < 1:
        raise ValueError("rows, cols and saturation_rate must be >= 1")

    def jid(i: int, j: int) -> int:
        return i * cols + j

    def approach(i: int, j: int, side: str) -> int:
        return 4 * jid(i, j) + SIDES.index(side)

    n_approach = 4 * rows * cols
    next_sink = n_approach
    sinks: dict[tuple[int, int, str], int] = {}
    neighbor_delta = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}
    # Traffic leaving toward side X arrives at the X-neighbor from the
    # opposite side, hence enters that neighbor's opposite approach.
    entry_side = {"N": "S", "E": "W", "S": "N", "W": "E"}

    # First pass: output node per (junction, side); sinks created in scan order.
    outputs: dict[tuple[int, int, str], int] = {}
    for i in range(rows):
        for j in range(cols):
            for side in SIDES:
                di, dj = neighbor_delta[side]
                ni, nj = i + di, j + dj
                if 0 <= ni < rows and 0 <= nj < cols:
                    outputs[(i, j, side)] = approach(ni, nj, entry_side[side])
                else:
                    sinks[(i, j, side)] = next_sink
                    outputs[(i, j, side)] = next_sink
                    next_sink += 1

    junctions: list[Junction] = []
    saturation: dict[Movement, int] = {}
    exit_sinks: set[Movement] = set()
    kinds: dict[Movement, str] = {}
    for i in range(rows):
        for j in range(cols):
            ins = tuple(approach(i, j, s) for s in SIDES)
            outs = tuple(outputs[(i, j, s)] for s in SIDES)
            mv: dict[tuple[str, str], Movement] = {}
            for side in SIDES:
                a = approach(i, j, side)
                for kind, out_of in (
                    ("straight", STRAIGHT_OUT),
                    ("left", LEFT_OUT),
                    ("right", RIGHT_OUT),
                ):
                    b = outputs[(i, j, out_of[side])]
                    mv[(side, kind)] = (a, b)
                    saturation[(a, b)] = saturation_rate
                    kinds[(a, b)] = kind
                    if (i, j, out_of[side]) in sinks:
                        exit_sinks.add((a, b))
            phases = (
                Phase(frozenset({mv[("N", "straight")], mv[("N", "right")],
                                 mv[("S", "straight")], mv[("S", "right")]})),
                Phase(frozenset({mv[("E", "straight")], mv[("E", "right")],
                                 mv[("W", "straight")], mv[("W", "right")]})),
                Phase(frozenset({mv[("N", "left")], mv[("S", "left")]})),
                Phase(frozenset({mv[("E", "left")], mv[("W", "left")]})),
            )
            junctions.append(Junction(id=jid(i, j), inputs=ins, outputs=outs, phases=phases))

    return Network(
        nodes=tuple(range(next_sink)),
        junctions=tuple(junctions),
        saturation=saturation,
        exit_sinks=frozenset(exit_sinks),
        movement_kinds=kinds,
    )


def service_matrix(net: Network, p: GlobalPhase) -> dict[Movement, int]:
    """Service rates induced by a global phase; absent movements serve zero."""
    rates: dict[Movement, int] = {}
    for j in net.junctions:
        idx = p.per_junction.get(j.id)
        if idx is None or not (0 <= idx < len(j.phases)):
            raise ValueError(f"invalid phase index {idx!r} for junction {j.id}")
        for m in j.phases[idx].sorted_movements():
            rates[m] = net.saturation[m]
    return rates


def validate_network(net: Network) -> list[str]:
    """Check every structural invariant; returns one entry per violation."""
    problems: list[str] = []

    n = len(net.nodes)
    if sorted(net.nodes) != list(range(n)):
        problems.append(f"node indices are not dense 0..{n - 1}")

    node_set = set(net.nodes)
    input_owner: dict[int, list[int]] = {}
    output_owner: dict[int, list[int]] = {}
    for j in net.junctions:
        if not j.phases:
            problems.append(f"junction {j.id} has no phases")
        overlap = set(j.inputs) & set(j.outputs)
        if overlap:
            problems.append(f"junction {j.id} has nodes {sorted(overlap)} as both input and output")
        for a in j.inputs:
            input_owner.setdefault(a, []).append(j.id)
        for b in j.outputs:
            output_owner.setdefault(b, []).append(j.id)
        for node in (*j.inputs, *j.outputs):
            if node not in node_set:
                problems.append(f"junction {j.id} references unknown node {node}")
        allowed = set(j.inputs)
        allowed_out = set(j.outputs)
        for k, ph in enumerate(j.phases):
            for a, b in ph.sorted_movements():
                if a not in allowed or b not in allowed_out:
                    problems.append(
                        f"junction {j.id} phase {k} movement ({a},{b}) is not an (input, output) pair"
                    )

    for node, owners in input_owner.items():
        if len(owners) > 1:
            problems.append(f"partition violated: node {node} is an input of junctions {owners}")
    for node, owners in output_owner.items():
        if len(owners) > 1:
            problems.append(f"partition violated: node {node} is an output of junctions {owners}")

    phase_movements = {m for j in net.junctions for m in j.movements()}
    for m in sorted(phase_movements - set(net.saturation)):
        problems.append(f"missing saturation for movement {m}")
    for m in sorted(set(net.saturation) - phase_movements):
        problems.append(f"saturation defined for movement {m} not used by any phase")
    for m, s in sorted(net.saturation.items()):
        if s < 1:
            problems.append(f"saturation {s} < 1 for movement {m}")

    return problems
