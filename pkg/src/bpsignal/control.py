"""Phase-selection policies.

Three controllers share the same max-weight skeleton: score every feasible
phase of a junction by the weighted service it would deliver, pick the
highest score. They differ in what they are allowed to see and how the
per-movement weight is formed:

* ``bp_star_local`` — sees the full per-direction queue matrix and the true
  routing rates; weight is upstream pressure minus routing-weighted
  downstream pressure, clamped at zero.
* ``bp_local`` — sees only aggregated queue lengths per node plus stop-line
  detector values; weight is the detector value times the clamped difference
  of aggregated pressures.
* fixed cycle — a pre-timed baseline that ignores all measurements.

Ties are broken by preferring, among the maximizing phases, one that serves
no zero-weight movement; any remaining tie goes to the lowest phase index.
If no maximizer can avoid zero-weight movements the filter is skipped (with
infinite queue capacity, serving an empty movement is harmless).

Each back-pressure class implements the per-junction rule twice: a readable
typed path over observation objects, and an array path over a whole
:class:`~bpsignal.dynamics.Simulation` used by the run loop. Tests pin the
two paths to each other and to a brute-force enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dynamics import (CompiledNetwork, ConfigError, QueueState, RoutingMatrix,
                       Simulation, aggregate, detectors)
from .network import GlobalPhase, Junction, Movement, Network


@dataclass
class PressureSpec:
    """Linear pressure functions with strictly positive slopes.

    ``slopes`` may be keyed by movement pairs (used by the routing-aware
    controller) or by node ids (used by the aggregated controller); anything
    absent falls back to ``default``. The integer default keeps exact
    arithmetic exact in the typed path.
    """

    kind: str = "linear"
    slopes: Mapping = field(default_factory=dict)
    default: float | int = 1

    def __post_init__(self) -> None:
        if self.kind != "linear":
            raise ConfigError(f"unsupported pressure kind {self.kind!r}")
        if not self.default > 0:
            raise ConfigError("default pressure slope must be > 0")
        for k, v in self.slopes.items():
            if not v > 0:
                raise ConfigError(f"pressure slope for {k!r} must be > 0, got {v}")

    def slope_for(self, key):
        return self.slopes.get(key, self.default)

    def movement_slopes(self, compiled: CompiledNetwork) -> np.ndarray:
        return np.array([float(self.slope_for(m)) for m in compiled.movements])

    def node_slopes(self, compiled: CompiledNetwork) -> np.ndarray:
        return np.array([float(self.slope_for(int(n))) for n in range(compiled.n_nodes)])


@dataclass
class CycleSpec:
    """Pre-timed schedule: per-junction period, phase order and offset."""

    period: int | Mapping[int, int] = 4
    order: tuple[int, ...] | Mapping[int, tuple[int, ...]] | None = None
    offsets: int | Mapping[int, int] = 0

    def _get(self, value, junction_id: int, default):
        if isinstance(value, Mapping):
            return value.get(junction_id, default)
        return default if value is None else value

    def for_junction(self, junction: Junction) -> tuple[int, tuple[int, ...], int]:
        n = len(junction.phases)
        period = int(self._get(self.period, junction.id, 4))
        order = tuple(self._get(self.order, junction.id, tuple(range(n))) or range(n))
        offset = int(self._get(self.offsets, junction.id, 0))
        if sorted(order) != list(range(n)):
            raise ConfigError(
                f"cycle order {order} for junction {junction.id} is not a permutation of 0..{n - 1}")
        if period < n or period % n != 0:
            raise ConfigError(
                f"cycle period {period} for junction {junction.id} must be a positive multiple of {n}")
        return period, order, offset


@dataclass
class FullObservation:
    """What the routing-aware controller sees at one junction.

    ``q_matrix`` carries the per-direction queue rows of the junction's
    inputs and of its in-network outputs (the one-hop-downstream queues);
    ``routing`` carries the routing rows of the outputs.
    """

    q_matrix: dict[Movement, int]
    routing: dict[Movement, float]


@dataclass
class AggregatedObservation:
    """What the routing-free controller sees: no per-direction counts.

    ``q_agg`` maps each input and output node to its aggregated queue length
    (zero for exit sinks); ``d`` maps each movement to its stop-line detector
    value min(Q/s, 1).
    """

    q_agg: dict[int, int]
    d: dict[Movement, object]


def observe_full(state: QueueState, net: Network, routing: RoutingMatrix,
                 junction: Junction) -> FullObservation:
    q_matrix: dict[Movement, int] = {}
    for m in junction.movements():
        q_matrix[m] = state.q.get(m, 0)
    routing_rows: dict[Movement, float] = {}
    for b in junction.outputs:
        down = net.junction_of_input(b)
        if down is None:
            continue  # exit sink: no downstream queue row
        for m in down.movements():
            if m[0] == b:
                q_matrix[m] = state.q.get(m, 0)
                routing_rows[m] = routing.rates.get(m, 0.0)
    return FullObservation(q_matrix=q_matrix, routing=routing_rows)


def observe_aggregated(state: QueueState, net: Network,
                       junction: Junction) -> AggregatedObservation:
    det = detectors(state, net)
    q_agg = {int(n): aggregate(state, n) for n in (*junction.inputs, *junction.outputs)}
    d = {m: det[m] for m in junction.movements()}
    return AggregatedObservation(q_agg=q_agg, d=d)


def _argmax_with_tiebreak(scores: list, zero_served: list[bool]) -> int:
    best = max(scores)
    candidates = [i for i, s in enumerate(scores) if s == best]
    good = [i for i in candidates if not zero_served[i]]
    return (good or candidates)[0]


def bp_star_local(obs: FullObservation, junction: Junction, pressure: PressureSpec,
                  saturation: Mapping[Movement, int]) -> int:
    """Routing-aware max-weight phase choice for one junction."""
    down: dict[int, object] = {}
    for b in junction.outputs:
        total = 0
        for m in sorted(obs.routing):
            if m[0] == b:
                if m not in obs.q_matrix:
                    raise ConfigError(f"routing row entry {m} lacks a queue observation")
                total = total + obs.routing[m] * (pressure.slope_for(m) * obs.q_matrix[m])
        down[b] = total

    weights: dict[Movement, object] = {}
    for m in junction.movements():
        a, b = m
        pi = pressure.slope_for(m) * obs.q_matrix.get(m, 0)
        w = pi - down[b]
        weights[m] = w if w > 0 else 0

    scores = []
    zero_served = []
    for ph in junction.phases:
        s = 0
        hit_zero = False
        for m in ph.sorted_movements():
            s = s + weights[m] * saturation[m]
            hit_zero = hit_zero or weights[m] == 0
        scores.append(s)
        zero_served.append(hit_zero)
    return _argmax_with_tiebreak(scores, zero_served)


def bp_local(obs: AggregatedObservation, junction: Junction, pressure: PressureSpec,
             saturation: Mapping[Movement, int]) -> int:
    """Aggregated max-weight phase choice: detectors times pressure drop."""
    pi = {n: pressure.slope_for(n) * obs.q_agg.get(n, 0)
          for n in (*junction.inputs, *junction.outputs)}

    weights: dict[Movement, object] = {}
    for m in junction.movements():
        a, b = m
        diff = pi[a] - pi[b]
        weights[m] = obs.d[m] * diff if diff > 0 else 0

    scores = []
    zero_served = []
    for ph in junction.phases:
        s = 0
        hit_zero = False
        for m in ph.sorted_movements():
            s = s + weights[m] * saturation[m]
            hit_zero = hit_zero or weights[m] == 0
        scores.append(s)
        zero_served.append(hit_zero)
    return _argmax_with_tiebreak(scores, zero_served)


class _VectorizedMaxWeight:
    """Shared array-path machinery: weights -> per-phase scores -> choice."""

    name = "max-weight"

    def __init__(self, pressure: PressureSpec | None = None):
        self.pressure = pressure or PressureSpec()
        self._c: CompiledNetwork | None = None

    def prepare(self, sim: Simulation) -> None:
        self._c = sim.compiled
        self._sat_f = sim.compiled.mv_sat.astype(np.float64)

    def _weights(self, sim: Simulation) -> np.ndarray:
        raise NotImplementedError

    def choose(self, sim: Simulation) -> np.ndarray:
        c = self._c
        W = self._weights(sim)
        contrib = (W * self._sat_f)[c.slot_mv]
        flat_scores = np.bincount(c.slot_of, weights=contrib, minlength=c.n_phase_slots)
        flat_zero = np.bincount(c.slot_of, weights=(W[c.slot_mv] == 0.0).astype(np.float64),
                                minlength=c.n_phase_slots)

        scores = np.full(c.n_junctions * c.max_phases, -np.inf)
        scores[c.slot_dense] = flat_scores
        scores = scores.reshape(c.n_junctions, c.max_phases)
        zero_served = np.ones(c.n_junctions * c.max_phases, dtype=bool)
        zero_served[c.slot_dense] = flat_zero > 0
        zero_served = zero_served.reshape(c.n_junctions, c.max_phases)

        best = scores.max(axis=1)
        is_max = scores == best[:, None]
        good = is_max & ~zero_served
        has_good = good.any(axis=1)
        return np.where(has_good, good.argmax(axis=1), is_max.argmax(axis=1))


class BackPressureStarController(_VectorizedMaxWeight):
    """Routing-aware controller; granted the full queue matrix and rates."""

    name = "bp_star"

    def prepare(self, sim: Simulation) -> None:
        super().prepare(sim)
        self._theta_m = self.pressure.movement_slopes(sim.compiled)

    def _weights(self, sim: Simulation) -> np.ndarray:
        c = self._c
        pi = self._theta_m * sim.q
        node_down = np.bincount(c.mv_from, weights=sim.r_vec * pi, minlength=c.n_nodes)
        return np.maximum(pi - node_down[c.mv_to], 0.0)

    def local_phase(self, junction: Junction, obs: FullObservation,
                    saturation: Mapping[Movement, int], slot: int) -> int:
        return bp_star_local(obs, junction, self.pressure, saturation)

    def observe(self, state: QueueState, net: Network, routing: RoutingMatrix,
                junction: Junction) -> FullObservation:
        return observe_full(state, net, routing, junction)


class BackPressureController(_VectorizedMaxWeight):
    """Aggregated controller; sees node totals and stop-line detectors only."""

    name = "bp"

    def prepare(self, sim: Simulation) -> None:
        super().prepare(sim)
        self._theta_n = self.pressure.node_slopes(sim.compiled)

    def _weights(self, sim: Simulation) -> np.ndarray:
        c = self._c
        qf = sim.q.astype(np.float64)
        agg = np.bincount(c.mv_from, weights=qf, minlength=c.n_nodes)
        pi = self._theta_n * agg
        d = np.minimum(qf / self._sat_f, 1.0)
        return d * np.maximum(pi[c.mv_from] - pi[c.mv_to], 0.0)

    def local_phase(self, junction: Junction, obs: AggregatedObservation,
                    saturation: Mapping[Movement, int], slot: int) -> int:
        return bp_local(obs, junction, self.pressure, saturation)

    def observe(self, state: QueueState, net: Network, routing: RoutingMatrix,
                junction: Junction) -> AggregatedObservation:
        return observe_aggregated(state, net, junction)


class FixedCycleController:
    """Pre-timed baseline: rotates phases on a fixed schedule."""

    name = "fixed"

    def __init__(self, cycle: CycleSpec | None = None):
        self.cycle = cycle or CycleSpec()
        self._c = None

    def prepare(self, sim: Simulation) -> None:
        c = sim.compiled
        self._c = c
        self._counts = c.phase_counts
        self._dwell = np.empty(c.n_junctions, dtype=np.int64)
        self._offset = np.empty(c.n_junctions, dtype=np.int64)
        self._order = np.zeros((c.n_junctions, c.max_phases), dtype=np.int64)
        for jpos, j in enumerate(c.net.junctions):
            period, order, offset = self.cycle.for_junction(j)
            self._dwell[jpos] = period // len(j.phases)
            self._offset[jpos] = offset
            self._order[jpos, : len(order)] = order

    def local_phase(self, junction: Junction, obs, saturation, slot: int) -> int:
        period, order, offset = self.cycle.for_junction(junction)
        n = len(junction.phases)
        return order[((slot + offset) // (period // n)) % n]

    def choose(self, sim: Simulation) -> np.ndarray:
        idx = ((sim.slot + self._offset) // self._dwell) % self._counts
        return self._order[np.arange(self._c.n_junctions), idx]


def select_global(policy, observations: Mapping[int, object], net: Network,
                  slot: int) -> GlobalPhase:
    """Apply a policy's local rule independently at every junction."""
    per: dict[int, int] = {}
    for j in net.junctions:
        per[j.id] = policy.local_phase(j, observations.get(j.id), net.saturation, slot)
    return GlobalPhase(per)


def make_controller(name: str, pressure: PressureSpec | None = None,
                    cycle: CycleSpec | None = None):
    if name == "bp_star":
        return BackPressureStarController(pressure)
    if name == "bp":
        return BackPressureController(pressure)
    if name == "fixed":
        return FixedCycleController(cycle)
    raise ConfigError(f"unknown controller {name!r}; expected bp_star, bp or fixed")
