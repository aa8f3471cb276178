"""Stability diagnostics and experiment logic.

Stability is judged operationally: discard a warmup prefix of the total
queue trajectory, fit a least-squares slope to the rest, and call the run
stable when the slope is a small fraction of the network-wide arrival rate.
The frontier of stable arrival scalings is then located by bisection, and
two controllers are compared by the ratio of their frontiers on the same
arrival sample with common random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import PressureSpec, make_controller
from .dynamics import (ArrivalConfig, CompiledNetwork, ConfigError, QueueState,
                       RoutingMatrix, Simulation, Trajectory)
from .network import Network


class BracketError(RuntimeError):
    """Bisection bracket does not straddle the stability frontier."""

    def __init__(self, message: str, probes: list["ProbeResult"]):
        super().__init__(message)
        self.probes = probes


@dataclass
class StabilityVerdict:
    """Outcome of the slope test on one stored trajectory."""

    stable: bool
    slope: float
    peak_queue: int
    window: tuple[int, int]


@dataclass
class DriftEstimate:
    """Monte-Carlo estimate of the one-slot Lyapunov drift."""

    mean_drift: float
    queue_mass_at_eval: int
    num_replications: int
    confidence_halfwidth: float


@dataclass
class SampleSpec:
    """One randomized routing/arrival parameter set for the sample study.

    ``routing`` maps each approach node to its (straight, left, right, exit)
    shares, which sum to one by construction; ``base_rates`` holds the
    per-node arrival rates before scaling.
    """

    routing: dict[int, tuple[float, float, float, float]]
    base_rates: dict[int, float]
    seed: int

    def routing_matrix(self, net: Network) -> RoutingMatrix:
        if not net.movement_kinds:
            raise ConfigError("network carries no movement kind labels")
        kind_pos = {"straight": 0, "left": 1, "right": 2}
        rates = {}
        for m, kind in net.movement_kinds.items():
            rates[m] = self.routing[m[0]][kind_pos[kind]]
        rm = RoutingMatrix(rates)
        rm.validate(net)
        return rm

    def arrival_config(self, x: float, batch_probability: float = 0.05,
                       batch_size: int = 10) -> ArrivalConfig:
        return ArrivalConfig(rate={n: x * lam for n, lam in self.base_rates.items()},
                             batch_probability=batch_probability, batch_size=batch_size)

    def total_base_rate(self) -> float:
        return float(sum(self.base_rates.values()))


@dataclass
class ProbeResult:
    """One bisection probe: a fresh simulation classified at scaling x."""

    x: float
    stable: bool
    slope: float
    peak_queue: int


@dataclass
class FrontierResult:
    """Largest probed arrival scaling classified stable, plus the probe log."""

    x_max: float
    slope_at_frontier: float
    probes: list[ProbeResult] = field(default_factory=list)


@dataclass
class SweepSettings:
    """Simulation and classification parameters shared by frontier probes."""

    num_slots: int = 50_000
    warmup_fraction: float = 0.25
    slope_threshold_fraction: float = 0.0001
    resolution: float = 0.0125
    replications: int = 1
    batch_probability: float = 0.05
    batch_size: int = 10
    early_abort_factor: float | None = 0.25
    pressure: PressureSpec | None = None


def lyapunov_full(state: QueueState, pressure: PressureSpec | None = None) -> float:
    """Quadratic Lyapunov value over per-direction queues."""
    pressure = pressure or PressureSpec()
    return float(sum(pressure.slope_for(m) * c * c for m, c in sorted(state.q.items())))


def lyapunov_aggregated(state: QueueState, pressure: PressureSpec | None = None) -> float:
    """Quadratic Lyapunov value over aggregated per-node queues."""
    pressure = pressure or PressureSpec()
    agg: dict[int, int] = {}
    for (a, _b), c in state.q.items():
        agg[a] = agg.get(a, 0) + c
    return float(sum(pressure.slope_for(n) * c * c for n, c in sorted(agg.items())))


def probe_seed(base_seed: int, x: float, replication: int) -> np.random.SeedSequence:
    """Seed for the probe at scaling x: identical across controllers (CRN)."""
    return np.random.SeedSequence([int(base_seed), int(round(x * 1_000_000)), replication])


def _controller_from(spec, pressure: PressureSpec | None):
    if isinstance(spec, str):
        return make_controller(spec, pressure)
    return spec()  # factory supplying a custom controller


def run_simulation(net: Network | CompiledNetwork, controller_spec,
                   arrivals: ArrivalConfig, routing: RoutingMatrix, num_slots: int,
                   seed, pressure: PressureSpec | None = None,
                   early_abort_factor: float | None = None,
                   record_state_every: int = 0) -> Trajectory:
    """Wire a controller (by name or factory) to a fresh simulation and run it."""
    controller = _controller_from(controller_spec, pressure)
    sim = Simulation(net, arrivals, routing, seed=seed)
    return sim.run(controller, num_slots, pressure=pressure,
                   early_abort_factor=early_abort_factor,
                   record_state_every=record_state_every)


def detect_stability(total_queue, total_arrival_rate: float,
                     warmup_fraction: float = 0.25,
                     slope_threshold_fraction: float = 0.0001) -> StabilityVerdict:
    """Least-squares slope test on a total-queue trajectory.

    Stable iff the post-warmup slope is below ``slope_threshold_fraction``
    times the network-wide arrival rate (vehicles per slot). Pure function of
    its inputs; repeated calls agree exactly.
    """
    y = np.asarray(total_queue, dtype=np.float64)
    if len(y) < 10_000:
        raise ValueError(f"trajectory has {len(y)} slots; need at least 10000")
    start = int(len(y) * warmup_fraction)
    window = y[start:]
    t = np.arange(start, len(y), dtype=np.float64)
    slope = float(np.polyfit(t, window, 1)[0])
    return StabilityVerdict(
        stable=slope < slope_threshold_fraction * total_arrival_rate,
        slope=slope,
        peak_queue=int(window.max()),
        window=(start, len(y) - 1),
    )


def estimate_drift(net: Network | CompiledNetwork, controller_spec,
                   arrivals: ArrivalConfig, routing: RoutingMatrix,
                   heavy_init: int, replications: int, seed: int,
                   pressure: PressureSpec | None = None) -> DriftEstimate:
    """One-slot Lyapunov drift from a heavy-load start, averaged over replications.

    Every per-direction queue is initialized to ``heavy_init`` (which must be
    at least every saturation rate so one slot of service runs saturated) and
    one slot is simulated per replication with independent randomness. The
    drift uses the aggregated Lyapunov function.
    """
    if replications < 30:
        raise ConfigError(f"replications {replications} < 30; estimate would be unreliable")
    compiled = net if isinstance(net, CompiledNetwork) else CompiledNetwork(net)
    max_sat = int(compiled.mv_sat.max())
    if heavy_init < max_sat:
        raise ConfigError(
            f"heavy_init {heavy_init} below saturation rate {max_sat}; not heavy load")

    pressure = pressure or PressureSpec()
    theta_n = pressure.node_slopes(compiled)
    root = np.random.SeedSequence(seed)
    drifts = np.empty(replications, dtype=np.float64)
    for rep, child in enumerate(root.spawn(replications)):
        controller = _controller_from(controller_spec, pressure)
        sim = Simulation(compiled, arrivals, routing, seed=child)
        sim.fill_queues(heavy_init)
        controller.prepare(sim)
        agg0 = compiled.aggregate_by_node(sim.q.astype(np.float64))
        v0 = float(np.dot(theta_n, agg0 * agg0))
        sim.step_with_phases(controller.choose(sim))
        agg1 = compiled.aggregate_by_node(sim.q.astype(np.float64))
        v1 = float(np.dot(theta_n, agg1 * agg1))
        drifts[rep] = v1 - v0

    mean = float(drifts.mean())
    half = float(1.96 * drifts.std(ddof=1) / np.sqrt(replications))
    return DriftEstimate(
        mean_drift=mean,
        queue_mass_at_eval=heavy_init * compiled.n_movements,
        num_replications=replications,
        confidence_halfwidth=half,
    )


def classify_at(net: Network | CompiledNetwork, controller_spec,
                sample: SampleSpec, x: float, settings: SweepSettings) -> ProbeResult:
    """Run fresh simulation(s) at scaling x and majority-vote the verdict."""
    compiled = net if isinstance(net, CompiledNetwork) else CompiledNetwork(net)
    routing = sample.routing_matrix(compiled.net)
    arrivals = sample.arrival_config(x, settings.batch_probability, settings.batch_size)
    total_rate = x * sample.total_base_rate()

    verdicts = []
    for rep in range(settings.replications):
        traj = run_simulation(compiled, controller_spec, arrivals, routing,
                              settings.num_slots, probe_seed(sample.seed, x, rep),
                              pressure=settings.pressure,
                              early_abort_factor=settings.early_abort_factor)
        verdicts.append(detect_stability(traj.total_queue, total_rate,
                                         settings.warmup_fraction,
                                         settings.slope_threshold_fraction))
    stable_votes = sum(v.stable for v in verdicts)
    stable = 2 * stable_votes > len(verdicts)
    return ProbeResult(
        x=x, stable=stable,
        slope=float(np.median([v.slope for v in verdicts])),
        peak_queue=max(v.peak_queue for v in verdicts),
    )


def find_x_max(net: Network | CompiledNetwork, controller_spec,
               sample: SampleSpec, x_lo: float, x_hi: float,
               settings: SweepSettings | None = None) -> FrontierResult:
    """Bisection for the largest arrival scaling classified stable.

    ``x_lo`` is trusted to be stable (a controller stabilizing nothing makes
    every probe fail and the bisection collapse onto ``x_lo``); ``x_hi`` is
    verified unstable and raises a bracket error otherwise. Each probe is a
    fresh simulation seeded from (sample seed, x), so the result does not
    depend on probe order. Returns the largest probed stable x (or ``x_lo``
    untested when nothing above it is stable); the final bracket width is at
    most ``resolution``.
    """
    settings = settings or SweepSettings()
    compiled = net if isinstance(net, CompiledNetwork) else CompiledNetwork(net)
    probes: list[ProbeResult] = []

    high = classify_at(compiled, controller_spec, sample, x_hi, settings)
    probes.append(high)
    if high.stable:
        raise BracketError(f"still stable at x_hi={x_hi} (slope {high.slope:.3f})", probes)

    lo, hi = x_lo, x_hi
    slope_at = float("nan")
    while hi - lo > settings.resolution:
        mid = 0.5 * (lo + hi)
        probe = classify_at(compiled, controller_spec, sample, mid, settings)
        probes.append(probe)
        if probe.stable:
            lo, slope_at = mid, probe.slope
        else:
            hi = mid
    return FrontierResult(x_max=lo, slope_at_frontier=slope_at, probes=probes)


def performance_ratio(x_max_bp: float, x_max_star: float) -> float:
    """Frontier ratio of the aggregated controller to the routing-aware one."""
    if not x_max_star > 0:
        raise ValueError(f"x_max_star must be positive, got {x_max_star}")
    return x_max_bp / x_max_star


def generate_sample(net: Network, seed: int) -> SampleSpec:
    """Random routing/arrival sample: normalized uniform shares per node.

    Per approach node, straight/left/right shares are U[0,1] draws and the
    exit share is U[0, 0.1]; all four are divided by their sum so each row
    sums to one. Base arrival rates are independent U[0,1].
    """
    rng = np.random.default_rng(seed)
    nodes = net.approach_nodes()
    n = len(nodes)
    y_s = rng.uniform(0.0, 1.0, n)
    y_l = rng.uniform(0.0, 1.0, n)
    y_r = rng.uniform(0.0, 1.0, n)
    y_w = rng.uniform(0.0, 0.1, n)
    lam0 = rng.uniform(0.0, 1.0, n)
    total = y_s + y_l + y_r + y_w
    routing = {
        int(node): (float(y_s[i] / total[i]), float(y_l[i] / total[i]),
                    float(y_r[i] / total[i]), float(y_w[i] / total[i]))
        for i, node in enumerate(nodes)
    }
    return SampleSpec(routing=routing,
                      base_rates={int(node): float(lam0[i]) for i, node in enumerate(nodes)},
                      seed=seed)


def uniform_sample(net: Network, straight: float = 0.5, left: float = 0.2,
                   right: float = 0.2, exit_share: float = 0.1,
                   base_rate: float = 1.0, seed: int = 0) -> SampleSpec:
    """The homogeneous configuration recast as a sample (base rate 1 at x=λ)."""
    total = straight + left + right + exit_share
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"turn shares sum to {total}, expected 1")
    nodes = net.approach_nodes()
    row = (straight, left, right, exit_share)
    return SampleSpec(routing={int(n): row for n in nodes},
                      base_rates={int(n): base_rate for n in nodes}, seed=seed)
