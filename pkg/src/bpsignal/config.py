"""Experiment configuration: defaults, named presets, file and flag overrides.

A run is reproducible from the resolved config plus the master seed alone;
every command embeds the resolved config in its summary output.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .dynamics import ArrivalConfig, ConfigError, RoutingMatrix
from .network import Network, build_grid_network

CONTROLLERS = ("bp_star", "bp", "fixed")


@dataclass
class ExperimentConfig:
    # network
    rows: int = 21
    cols: int = 21
    saturation: int = 10
    network_file: str | None = None
    # controller
    controller: str = "bp_star"
    pressure_slope: float = 1.0
    cycle_period: int = 4
    cycle_order: tuple[int, ...] | None = None
    cycle_offsets: int = 0
    # arrivals (uniform rate; sample studies draw their own)
    arrival_rate: float = 0.4
    batch_probability: float = 0.05
    batch_size: int = 10
    # simulation
    num_slots: int = 50_000
    dump_every: int = 0
    # uniform routing shares
    routing_straight: float = 0.5
    routing_left: float = 0.2
    routing_right: float = 0.2
    routing_exit: float = 0.1
    # stability classification
    warmup_fraction: float = 0.25
    slope_threshold_fraction: float = 0.0001
    # frontier sweep
    x_lo: float = 0.4
    x_hi: float = 1.0
    resolution: float = 0.0125
    replications: int = 1
    early_abort_factor: float | None = 0.25
    # sample study
    n_samples: int = 10
    # drift experiment
    drift_lambdas: tuple[float, ...] = (0.0, 0.4, 2.0)
    drift_replications: int = 200
    heavy_init: int | None = None
    # plumbing
    master_seed: int = 1101
    workers: int = 1
    plots: bool = True

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"grid dims {self.rows}x{self.cols} must be >= 1x1")
        if self.saturation < 1:
            raise ConfigError(f"saturation {self.saturation} must be >= 1")
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller {self.controller!r} not one of {CONTROLLERS}")
        if self.arrival_rate < 0:
            raise ConfigError(f"arrival_rate {self.arrival_rate} must be >= 0")
        if not 0 <= self.batch_probability <= 1:
            raise ConfigError(f"batch_probability {self.batch_probability} outside [0, 1]")
        if self.num_slots < 1:
            raise ConfigError(f"num_slots {self.num_slots} must be >= 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError(f"warmup_fraction {self.warmup_fraction} outside [0, 1)")
        shares = (self.routing_straight, self.routing_left, self.routing_right,
                  self.routing_exit)
        if any(s < 0 for s in shares) or abs(sum(shares) - 1.0) > 1e-9:
            raise ConfigError(f"routing shares {shares} must be non-negative and sum to 1")
        if not self.x_lo < self.x_hi:
            raise ConfigError(f"sweep bracket [{self.x_lo}, {self.x_hi}] is empty")
        if self.resolution <= 0:
            raise ConfigError(f"resolution {self.resolution} must be > 0")
        if self.replications < 1:
            raise ConfigError(f"replications {self.replications} must be >= 1")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples {self.n_samples} must be >= 1")
        if self.pressure_slope <= 0:
            raise ConfigError(f"pressure_slope {self.pressure_slope} must be > 0")

    def build_network(self) -> Network:
        if self.network_file:
            with open(self.network_file) as fh:
                return Network.from_json(fh.read())
        return build_grid_network(self.rows, self.cols, self.saturation)

    def uniform_routing(self, net: Network) -> RoutingMatrix:
        return RoutingMatrix.uniform_turns(net, self.routing_straight,
                                           self.routing_left, self.routing_right)

    def uniform_arrivals(self, rate: float | None = None) -> ArrivalConfig:
        return ArrivalConfig(rate=self.arrival_rate if rate is None else rate,
                             batch_probability=self.batch_probability,
                             batch_size=self.batch_size)

    def effective_heavy_init(self) -> int:
        return self.heavy_init if self.heavy_init is not None else 10 * self.saturation

    def resolved(self) -> dict:
        return dataclasses.asdict(self)


# The eight homogeneous-demand experiments: 21x21 grid, saturation 10,
# turn shares 0.5/0.2/0.2 with exit 0.1, batches of 10 at probability 0.05,
# unit pressure slopes, 50k slots.
UNIFORM_RATES = (0.4, 0.5, 0.6, 0.65, 0.7, 0.75, 0.8, 0.9)

PRESETS: dict[str, dict] = {
    f"uniform-{rate:g}": {"arrival_rate": rate} for rate in UNIFORM_RATES
}


def make_config(preset: str | None = None, config_path: str | None = None,
                **overrides) -> ExperimentConfig:
    """Defaults, then preset, then config file, then explicit overrides."""
    values: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; presets: {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if config_path is not None:
        try:
            with open(config_path) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        values.update(doc)
    values.update({k: v for k, v in overrides.items() if v is not None})

    known = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    for name in ("drift_lambdas",):
        if name in values and not isinstance(values[name], tuple):
            values[name] = tuple(float(v) for v in values[name])
    if values.get("cycle_order") is not None and not isinstance(values["cycle_order"], tuple):
        values["cycle_order"] = tuple(int(v) for v in values["cycle_order"])
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg
