"""Slotted stochastic queue dynamics.

One slot, in order: the controller picks a phase from the start-of-slot
state; every active movement transfers min(queue, saturation) vehicles;
transfers landing on an in-network node and the slot's exogenous arrivals
are split over that node's turn queues (or exit immediately); everything
added during the slot becomes servable at the next slot. Vehicle counts are
integers throughout, so the conservation identity

    total(t+1) = total(t) + arrivals(t) - exits(t)

holds exactly, with exits counting both routing exits and transfers on
exit-sink movements.

The heavy lifting happens in :class:`Simulation`, which flattens the network
into index arrays once and advances whole slots with vectorized numpy ops.
The functional :func:`step` wraps a one-slot simulation so both paths share
a single implementation of the dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .network import GlobalPhase, Movement, Network


class ConfigError(ValueError):
    """Invalid arrival/routing/experiment configuration."""


@dataclass
class ArrivalConfig:
    """Exogenous arrival law: Poisson event stream with single-or-batch events.

    Events arrive at rate ``rate / mean_event_size`` so the long-run vehicle
    rate is exactly ``rate``; each event is a batch of ``batch_size`` with
    probability ``batch_probability``, else a single vehicle. ``rate`` may be
    a scalar applied to every approach node or a per-node map.
    """

    rate: float | Mapping[int, float]
    batch_probability: float = 0.05
    batch_size: int = 10

    def __post_init__(self) -> None:
        if not 0.0 <= self.batch_probability <= 1.0:
            raise ConfigError(f"batch_probability {self.batch_probability} outside [0, 1]")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size {self.batch_size} must be >= 1")

    @property
    def mean_event_size(self) -> float:
        return 1.0 + self.batch_probability * (self.batch_size - 1)

    def rate_for(self, node: int) -> float:
        lam = self.rate[node] if isinstance(self.rate, Mapping) else float(self.rate)
        if lam < 0:
            raise ConfigError(f"negative arrival rate {lam} at node {node}")
        return lam

    def rate_array(self, nodes: np.ndarray) -> np.ndarray:
        if isinstance(self.rate, Mapping):
            return np.array([self.rate_for(int(n)) for n in nodes], dtype=np.float64)
        lam = float(self.rate)
        if lam < 0:
            raise ConfigError(f"negative arrival rate {lam}")
        return np.full(len(nodes), lam, dtype=np.float64)


@dataclass
class RoutingMatrix:
    """Per-movement routing probabilities; the row deficit is the exit rate.

    ``rates[(a, b)]`` is the probability that a vehicle entering node ``a``
    heads for ``b``. Rows may sum to less than one; the remainder is the
    probability of leaving the network immediately on entering ``a``.
    """

    rates: dict[Movement, float]

    def row(self, node: int) -> dict[int, float]:
        return {b: r for (a, b), r in self.rates.items() if a == node}

    def exit_probability(self, node: int) -> float:
        return 1.0 - sum(self.row(node).values())

    def validate(self, net: Network) -> None:
        movements = set(net.movements())
        rows: dict[int, float] = {}
        for (a, b), r in self.rates.items():
            if (a, b) not in movements:
                raise ConfigError(f"routing rate given for non-movement pair ({a},{b})")
            if r < 0:
                raise ConfigError(f"negative routing rate for ({a},{b})")
            rows[a] = rows.get(a, 0.0) + r
        for a, total in rows.items():
            if total > 1.0 + 1e-9:
                raise ConfigError(f"routing row of node {a} sums to {total} > 1")

    @classmethod
    def uniform_turns(cls, net: Network, straight: float, left: float,
                      right: float) -> "RoutingMatrix":
        """Same turn probabilities at every node, keyed off movement kinds."""
        if not net.movement_kinds:
            raise ConfigError("network carries no movement kind labels")
        shares = {"straight": straight, "left": left, "right": right}
        rates = {m: shares[k] for m, k in net.movement_kinds.items()}
        rm = cls(rates)
        rm.validate(net)
        return rm


@dataclass
class QueueState:
    """Ground-truth per-direction queues at a slot boundary."""

    q: dict[Movement, int]
    slot: int = 0

    @classmethod
    def zeros(cls, net: Network, slot: int = 0) -> "QueueState":
        return cls({m: 0 for m in net.movements()}, slot=slot)

    def total(self) -> int:
        return sum(self.q.values())

    def copy(self) -> "QueueState":
        return QueueState(dict(self.q), self.slot)


@dataclass
class FlowRecord:
    """Audit trail for one slot: what arrived, what moved, what left."""

    slot: int
    arrivals: dict[int, int]
    served: dict[Movement, int]
    exits: int


def aggregate(state: QueueState, node: int) -> int:
    """Total vehicles waiting at ``node`` across all intended directions."""
    return sum(c for (a, _b), c in state.q.items() if a == node)


def detectors(state: QueueState, net: Network) -> dict[Movement, Fraction]:
    """Stop-line detector values min(Q_ab / s_ab, 1) as exact rationals."""
    out: dict[Movement, Fraction] = {}
    for m in net.movements():
        d = Fraction(state.q.get(m, 0), net.saturation[m])
        out[m] = d if d < 1 else Fraction(1)
    return out


def sample_arrivals(cfg: ArrivalConfig, node: int, rng: np.random.Generator,
                    size: int | None = None):
    """Draw the slot's exogenous arrival count at ``node``.

    With ``size`` given, draws that many independent slots at once (same law),
    which is also how the simulation engine samples whole networks.
    """
    lam = cfg.rate_for(node)
    n = 1 if size is None else size
    events = rng.poisson(lam / cfg.mean_event_size, n)
    batches = rng.binomial(events, cfg.batch_probability) if cfg.batch_probability > 0 else 0
    total = events + batches * (cfg.batch_size - 1)
    return int(total[0]) if size is None else total


def route_vehicles(count: int, node: int, r: RoutingMatrix,
                   rng: np.random.Generator) -> tuple[dict[int, int], int]:
    """Split ``count`` vehicles entering ``node`` over its turn queues.

    Each vehicle independently picks downstream ``b`` with probability
    ``r[(node, b)]`` or exits with the row deficit. Returns the split and the
    exit count; they always total ``count``.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    row = r.row(node)
    total = sum(row.values())
    if total > 1.0 + 1e-9:
        raise ConfigError(f"routing row of node {node} sums to {total} > 1")
    targets = sorted(row)
    pvals = [row[b] for b in targets] + [max(0.0, 1.0 - total)]
    draw = rng.multinomial(count, np.array(pvals) / sum(pvals))
    split = {b: int(c) for b, c in zip(targets, draw[:-1]) if c > 0}
    return split, int(draw[-1])


class CompiledNetwork:
    """Flat index-array view of a Network, shared by engine and controllers.

    Movements are enumerated junction by junction in sorted order; queue
    state, saturation, detectors and weights all live in arrays indexed by
    that movement order.
    """

    def __init__(self, net: Network):
        self.net = net
        self.movements: list[Movement] = []
        mv_junction: list[int] = []
        for jpos, j in enumerate(net.junctions):
            for m in j.movements():
                self.movements.append(m)
                mv_junction.append(jpos)
        self.index: dict[Movement, int] = {m: i for i, m in enumerate(self.movements)}
        self.n_movements = len(self.movements)
        self.n_nodes = len(net.nodes)
        self.n_junctions = len(net.junctions)

        self.mv_from = np.array([a for a, _ in self.movements], dtype=np.int64)
        self.mv_to = np.array([b for _, b in self.movements], dtype=np.int64)
        self.mv_junction = np.array(mv_junction, dtype=np.int64)
        self.mv_sat = np.array([net.saturation[m] for m in self.movements], dtype=np.int64)
        self.mv_sink = np.array([m in net.exit_sinks for m in self.movements], dtype=bool)

        self.phase_counts = np.array([len(j.phases) for j in net.junctions], dtype=np.int64)
        self.max_phases = int(self.phase_counts.max())
        self.phase_offsets = np.concatenate(([0], np.cumsum(self.phase_counts)))[:-1]
        self.n_phase_slots = int(self.phase_counts.sum())

        # membership of movement m in local phase p of its junction, plus the
        # flat (junction, phase) slot -> movement incidence lists
        self.member = np.zeros((self.n_movements, self.max_phases), dtype=bool)
        slot_mv: list[int] = []
        slot_of: list[int] = []
        for jpos, j in enumerate(net.junctions):
            for p, ph in enumerate(j.phases):
                slot = int(self.phase_offsets[jpos]) + p
                for m in ph.sorted_movements():
                    mi = self.index[m]
                    self.member[mi, p] = True
                    slot_mv.append(mi)
                    slot_of.append(slot)
        self.slot_mv = np.array(slot_mv, dtype=np.int64)
        self.slot_of = np.array(slot_of, dtype=np.int64)

        # scatter (junction, local phase) scores into a dense (J, Pmax) table
        slot_j = np.repeat(np.arange(self.n_junctions), self.phase_counts)
        slot_p = np.concatenate([np.arange(c) for c in self.phase_counts])
        self.slot_dense = slot_j * self.max_phases + slot_p

        # approach nodes: nodes with outgoing movements (everything else is a sink)
        has_queue = np.zeros(self.n_nodes, dtype=bool)
        has_queue[self.mv_from] = True
        self.approach_nodes = np.flatnonzero(has_queue)

        # out-movement table per approach node, padded with -1
        per_node: dict[int, list[int]] = {int(n): [] for n in self.approach_nodes}
        for mi, a in enumerate(self.mv_from):
            per_node[int(a)].append(mi)
        self.max_options = max((len(v) for v in per_node.values()), default=0)
        napp = len(self.approach_nodes)
        self.node_opts = np.full((napp, self.max_options), -1, dtype=np.int64)
        for row, n in enumerate(self.approach_nodes):
            for k, mi in enumerate(per_node[int(n)]):
                self.node_opts[row, k] = mi

        self._arange_m = np.arange(self.n_movements)
        self._arange_app = np.arange(napp)

    def routing_arrays(self, routing: RoutingMatrix) -> tuple[np.ndarray, np.ndarray]:
        """Per-movement rates and per-node cumulative option thresholds.

        A vehicle entering a node picks the option whose threshold bin its
        uniform draw falls into; draws beyond the last threshold exit. Padded
        options repeat the previous threshold (zero width, never chosen).
        """
        routing.validate(self.net)
        r = np.array([routing.rates.get(m, 0.0) for m in self.movements], dtype=np.float64)
        napp = len(self.approach_nodes)
        cum = np.zeros((napp, self.max_options), dtype=np.float64)
        acc = np.zeros(napp, dtype=np.float64)
        for k in range(self.max_options):
            valid = self.node_opts[:, k] >= 0
            acc = acc + np.where(valid, r[self.node_opts[:, k]], 0.0)
            cum[:, k] = np.minimum(acc, 1.0)
        return r, cum

    def state_to_array(self, state: QueueState) -> np.ndarray:
        q = np.zeros(self.n_movements, dtype=np.int64)
        for m, c in state.q.items():
            if m not in self.index:
                raise ValueError(f"queue count for unknown movement {m}")
            if c < 0:
                raise ValueError(f"negative queue count at {m}")
            q[self.index[m]] = c
        return q

    def array_to_state(self, q: np.ndarray, slot: int) -> QueueState:
        return QueueState({m: int(q[i]) for i, m in enumerate(self.movements)}, slot=slot)

    def aggregate_by_node(self, q: np.ndarray) -> np.ndarray:
        return np.bincount(self.mv_from, weights=q, minlength=self.n_nodes)


@dataclass
class Trajectory:
    """Per-slot totals of one run, plus what is needed to audit it."""

    slots: np.ndarray
    total_queue: np.ndarray
    arrivals: np.ndarray
    exits: np.ndarray
    lyapunov_full: np.ndarray
    lyapunov_aggregated: np.ndarray
    initial_total: int
    aborted_early: bool = False
    state_dumps: list[tuple[int, dict[Movement, int]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.slots)

    def conservation_holds(self) -> bool:
        lhs = int(self.total_queue[-1]) if len(self.slots) else self.initial_total
        rhs = self.initial_total + int(self.arrivals.sum()) - int(self.exits.sum())
        return lhs == rhs

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("slot,total_queue,arrivals,exits,lyapunov_full,lyapunov_aggregated\n")
            for i in range(len(self.slots)):
                fh.write(
                    f"{int(self.slots[i])},{int(self.total_queue[i])},"
                    f"{int(self.arrivals[i])},{int(self.exits[i])},"
                    f"{float(self.lyapunov_full[i])!r},{float(self.lyapunov_aggregated[i])!r}\n"
                )


class Simulation:
    """Mutable simulation instance: compiled network + queue array + RNG streams.

    Randomness comes from two sub-streams spawned off the master seed, one
    for exogenous arrivals and one for routing splits, so the arrival
    realization is identical across controllers run with the same seed
    (common random numbers). A single instance is single-threaded; run
    several instances with different seeds for parallel experiments.
    """

    def __init__(self, net: Network | CompiledNetwork, arrivals: ArrivalConfig,
                 routing: RoutingMatrix, seed: int | None = None,
                 rng: np.random.Generator | None = None,
                 state: QueueState | None = None):
        self.compiled = net if isinstance(net, CompiledNetwork) else CompiledNetwork(net)
        self.arrivals_cfg = arrivals
        self.routing = routing
        if rng is not None:
            self.rng_arrivals = rng
            self.rng_routing = rng
        else:
            if isinstance(seed, np.random.SeedSequence):
                ss = seed
            else:
                ss = np.random.SeedSequence(0 if seed is None else seed)
            kids = ss.spawn(2)
            self.rng_arrivals = np.random.default_rng(kids[0])
            self.rng_routing = np.random.default_rng(kids[1])

        c = self.compiled
        self.q = c.state_to_array(state) if state is not None else np.zeros(c.n_movements, dtype=np.int64)
        self.slot = state.slot if state is not None else 0
        self.r_vec, self.split_cum = c.routing_arrays(routing)
        self._split_cols = [np.ascontiguousarray(self.split_cum[:, k])
                            for k in range(c.max_options)]
        self.lam_vec = arrivals.rate_array(c.approach_nodes)
        self.total_arrival_rate = float(self.lam_vec.sum())
        self._mean_event = arrivals.mean_event_size
        self._batch_p = arrivals.batch_probability
        self._batch_extra = arrivals.batch_size - 1
        event_rate = self.lam_vec / self._mean_event
        self._lam_singles = event_rate * (1.0 - self._batch_p)
        self._lam_batches = event_rate * self._batch_p
        self._lam_stacked = np.concatenate([self._lam_singles, self._lam_batches])

    def fill_queues(self, count: int) -> None:
        self.q[:] = count

    def sample_arrival_vector(self) -> np.ndarray:
        # Poisson thinning: single-vehicle and batch events are independent
        # Poisson streams, jointly identical to drawing the event count and
        # then flagging each event as a batch.
        if self._batch_p > 0:
            draw = self.rng_arrivals.poisson(self._lam_stacked)
            n = len(self.lam_vec)
            return draw[:n] + draw[n:] * (self._batch_extra + 1)
        return self.rng_arrivals.poisson(self._lam_singles)

    def split_entering(self, entering: np.ndarray) -> tuple[np.ndarray, int]:
        """Split vehicles entering each approach node over its turn queues.

        Every vehicle draws one uniform and lands in the option bin it falls
        into (the remainder past the last bin exits), which is exactly the
        independent per-vehicle routing draw.
        """
        c = self.compiled
        total = int(entering.sum())
        stride = c.max_options + 1
        if total == 0:
            return np.zeros(c.n_movements, dtype=np.int64), 0
        node_of = np.repeat(c._arange_app, entering)
        u = self.rng_routing.random(total)
        option = np.zeros(total, dtype=np.int64)
        for col in self._split_cols:
            option += u > col[node_of]
        counts = np.bincount(node_of * stride + option,
                             minlength=len(c.approach_nodes) * stride)
        counts = counts.reshape(len(c.approach_nodes), stride)
        routed = np.zeros(c.n_movements, dtype=np.int64)
        for k in range(c.max_options):
            idx = c.node_opts[:, k]
            valid = idx >= 0
            routed[idx[valid]] = counts[valid, k]
        return routed, int(counts[:, -1].sum())

    def step_with_phases(self, local_phases: np.ndarray) -> dict:
        """Advance one slot under the given per-junction local phase indices."""
        c = self.compiled
        if ((local_phases < 0) | (local_phases >= c.phase_counts)).any():
            raise ValueError("local phase index out of range")
        active = c.member[c._arange_m, local_phases[c.mv_junction]]
        served = np.where(active, np.minimum(self.q, c.mv_sat), 0)
        self.q -= served

        exits_sink = int(served[c.mv_sink].sum())
        inflow_nodes = np.bincount(c.mv_to[~c.mv_sink], weights=served[~c.mv_sink],
                                   minlength=c.n_nodes).astype(np.int64)

        exog = self.sample_arrival_vector()
        entering = inflow_nodes[c.approach_nodes] + exog
        routed, exits_routing = self.split_entering(entering)
        self.q += routed

        self.slot += 1
        return {
            "arrivals": int(exog.sum()),
            "exits": exits_sink + exits_routing,
            "served": served,
            "exog": exog,
        }

    def run(self, controller, n_slots: int, pressure=None,
            record_state_every: int = 0,
            early_abort_factor: float | None = None,
            min_slots_before_abort: int = 10_000) -> Trajectory:
        """Run ``n_slots`` slots under ``controller`` and record per-slot totals.

        ``early_abort_factor`` optionally stops a clearly diverging run once
        the total queue exceeds factor * total_arrival_rate * slot (never
        before ``min_slots_before_abort`` slots); intended for frontier
        probes, not for reproducing full trajectories.

        The exact integer conservation identity is asserted on every run.
        """
        from .control import PressureSpec  # local import to avoid a cycle

        c = self.compiled
        pressure = pressure or PressureSpec()
        theta_m = pressure.movement_slopes(c)
        theta_n = pressure.node_slopes(c)

        controller.prepare(self)
        initial_total = int(self.q.sum())

        slots = np.empty(n_slots, dtype=np.int64)
        totals = np.empty(n_slots, dtype=np.int64)
        arrivals = np.empty(n_slots, dtype=np.int64)
        exits = np.empty(n_slots, dtype=np.int64)
        lyap_f = np.empty(n_slots, dtype=np.float64)
        lyap_a = np.empty(n_slots, dtype=np.float64)
        dumps: list[tuple[int, dict[Movement, int]]] = []

        aborted = False
        n_done = 0
        for i in range(n_slots):
            chosen = controller.choose(self)
            rec = self.step_with_phases(chosen)
            qf = self.q.astype(np.float64)
            agg = np.bincount(c.mv_from, weights=qf, minlength=c.n_nodes)
            slots[i] = self.slot - 1
            totals[i] = self.q.sum()
            arrivals[i] = rec["arrivals"]
            exits[i] = rec["exits"]
            lyap_f[i] = float(np.dot(theta_m, qf * qf))
            lyap_a[i] = float(np.dot(theta_n, agg * agg))
            n_done = i + 1
            if record_state_every and (self.slot % record_state_every == 0):
                dumps.append((self.slot, {m: int(self.q[k]) for k, m in enumerate(c.movements)}))
            if (early_abort_factor is not None
                    and self.slot >= min_slots_before_abort
                    and totals[i] > early_abort_factor * self.total_arrival_rate * self.slot):
                aborted = True
                break

        traj = Trajectory(
            slots=slots[:n_done], total_queue=totals[:n_done],
            arrivals=arrivals[:n_done], exits=exits[:n_done],
            lyapunov_full=lyap_f[:n_done], lyapunov_aggregated=lyap_a[:n_done],
            initial_total=initial_total, aborted_early=aborted, state_dumps=dumps,
        )
        if not traj.conservation_holds():
            raise AssertionError("vehicle conservation violated; dynamics bug")
        return traj


def step(state: QueueState, net: Network, p: GlobalPhase, cfg: ArrivalConfig,
         r: RoutingMatrix, rng: np.random.Generator) -> tuple[QueueState, FlowRecord]:
    """One functional slot update; see the module docstring for the order.

    Shares the engine implementation: arrivals are drawn first, routing
    splits second, all from the given generator.
    """
    compiled = CompiledNetwork(net)
    sim = Simulation(compiled, cfg, r, rng=rng, state=state)
    local = np.array(
        [p.per_junction[j.id] for j in net.junctions], dtype=np.int64
    )
    for jpos, j in enumerate(net.junctions):
        if not 0 <= local[jpos] < len(j.phases):
            raise ValueError(f"invalid phase index {local[jpos]} for junction {j.id}")
    rec = sim.step_with_phases(local)
    new_state = compiled.array_to_state(sim.q, sim.slot)
    served = {m: int(rec["served"][i]) for i, m in enumerate(compiled.movements)
              if rec["served"][i] > 0}
    arrivals = {int(n): int(a) for n, a in zip(compiled.approach_nodes, rec["exog"]) if a > 0}
    return new_state, FlowRecord(slot=state.slot, arrivals=arrivals, served=served,
                                 exits=rec["exits"])
