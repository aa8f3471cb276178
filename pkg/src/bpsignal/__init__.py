"""Back-pressure traffic signal control on slotted queueing networks."""

from .network import (GlobalPhase, Junction, Movement, Network, Phase,
                      build_grid_network, service_matrix, validate_network)
from .dynamics import (ArrivalConfig, CompiledNetwork, ConfigError, FlowRecord,
                       QueueState, RoutingMatrix, Simulation, Trajectory,
                       aggregate, detectors, route_vehicles, sample_arrivals, step)
from .control import (AggregatedObservation, BackPressureController,
                      BackPressureStarController, CycleSpec, FixedCycleController,
                      FullObservation, PressureSpec, bp_local, bp_star_local,
                      make_controller, observe_aggregated, observe_full, select_global)
from .analysis import (BracketError, DriftEstimate, FrontierResult, ProbeResult,
                       SampleSpec, StabilityVerdict, SweepSettings, classify_at,
                       detect_stability, estimate_drift, find_x_max, generate_sample,
                       lyapunov_aggregated, lyapunov_full, performance_ratio,
                       probe_seed, run_simulation, uniform_sample)

__version__ = "0.1.0"
