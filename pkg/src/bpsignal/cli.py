"""Command-line front door: simulate, sweep, samples, drift, gen-network.

Every command writes delimited data (CSV / JSON) into the output directory
and, unless ``--no-plots`` is given, renders a matplotlib figure next to it.
Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import functools
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import plots
from .analysis import (BracketError, SweepSettings, detect_stability, estimate_drift,
                       find_x_max, generate_sample, performance_ratio, uniform_sample)
from .config import PRESETS, ExperimentConfig, make_config
from .control import CycleSpec, PressureSpec, make_controller
from .dynamics import CompiledNetwork, ConfigError, Simulation
from .network import build_grid_network, validate_network


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _sample_seed(master_seed: int, sample_id: int) -> int:
    return int(np.random.SeedSequence([master_seed, sample_id]).generate_state(1)[0])


def _pressure(cfg: ExperimentConfig) -> PressureSpec:
    slope = cfg.pressure_slope
    return PressureSpec(default=int(slope) if float(slope).is_integer() else slope)


def _sweep_settings(cfg: ExperimentConfig) -> SweepSettings:
    return SweepSettings(
        num_slots=cfg.num_slots,
        warmup_fraction=cfg.warmup_fraction,
        slope_threshold_fraction=cfg.slope_threshold_fraction,
        resolution=cfg.resolution,
        replications=cfg.replications,
        batch_probability=cfg.batch_probability,
        batch_size=cfg.batch_size,
        early_abort_factor=cfg.early_abort_factor,
        pressure=_pressure(cfg),
    )


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(1)
        except BracketError as exc:
            click.echo(f"bracket error: {exc}", err=True)
            for p in exc.probes:
                click.echo(f"  probe x={p.x:.5f} stable={p.stable} slope={p.slope:.4f}",
                           err=True)
            sys.exit(2)
        except OSError as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _common_options(fn):
    fn = click.option("--config", "config_path", type=str, default=None,
                      help="JSON config document.")(fn)
    fn = click.option("--preset", type=str, default=None,
                      help=f"named preset, one of {sorted(PRESETS)}")(fn)
    fn = click.option("--seed", "master_seed", type=int, default=None,
                      help="master seed; all randomness derives from it.")(fn)
    fn = click.option("--controller", type=click.Choice(["bp_star", "bp", "fixed"]),
                      default=None)(fn)
    fn = click.option("--out", "out_dir", type=str, default="out",
                      help="output directory.")(fn)
    fn = click.option("--slots", "num_slots", type=int, default=None,
                      help="simulation length in slots.")(fn)
    fn = click.option("--workers", type=int, default=None,
                      help="parallel workers for sample studies.")(fn)
    fn = click.option("--no-plots", "no_plots", is_flag=True, default=False,
                      help="skip figure rendering.")(fn)
    return fn


def _build(config_path, preset, no_plots, **overrides) -> ExperimentConfig:
    if no_plots:
        overrides["plots"] = False
    return make_config(preset=preset, config_path=config_path, **overrides)


@click.group()
def main() -> None:
    """Back-pressure traffic signal simulator."""


@main.command()
@_common_options
@click.option("--dump-every", type=int, default=None,
              help="dump the full queue matrix every N slots (JSONL).")
@_handle_errors
def simulate(config_path, preset, master_seed, controller, out_dir, num_slots,
             workers, no_plots, dump_every):
    """Run one simulation; write per-slot CSV, summary JSON and a figure."""
    cfg = _build(config_path, preset, no_plots, master_seed=master_seed,
                 controller=controller, num_slots=num_slots, workers=workers,
                 dump_every=dump_every)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    net = cfg.build_network()
    compiled = CompiledNetwork(net)
    routing = cfg.uniform_routing(net)
    arrivals = cfg.uniform_arrivals()
    ctrl = make_controller(cfg.controller, _pressure(cfg),
                           CycleSpec(period=cfg.cycle_period, order=cfg.cycle_order,
                                     offsets=cfg.cycle_offsets))
    sim = Simulation(compiled, arrivals, routing, seed=cfg.master_seed)

    t0 = time.perf_counter()
    traj = sim.run(ctrl, cfg.num_slots, pressure=_pressure(cfg),
                   record_state_every=cfg.dump_every)
    runtime = time.perf_counter() - t0

    traj.write_csv(out / "trajectory.csv")
    if cfg.dump_every:
        with open(out / "state_dumps.jsonl", "w") as fh:
            for slot, q in traj.state_dumps:
                fh.write(json.dumps(
                    {"slot": slot, "q": [[a, b, c] for (a, b), c in sorted(q.items())]},
                    sort_keys=True) + "\n")

    total_rate = sim.total_arrival_rate
    verdict = None
    if len(traj) >= 10_000:
        v = detect_stability(traj.total_queue, total_rate, cfg.warmup_fraction,
                             cfg.slope_threshold_fraction)
        verdict = {"stable": v.stable, "slope": v.slope, "peak_queue": v.peak_queue,
                   "window": list(v.window)}
    summary = {
        "verdict": verdict,
        "final_total_queue": int(traj.total_queue[-1]),
        "total_arrivals": int(traj.arrivals.sum()),
        "total_exits": int(traj.exits.sum()),
        "slots_run": len(traj),
        "total_arrival_rate": total_rate,
        "runtime_seconds": runtime,
        "config": cfg.resolved(),
    }
    _write_json(out / "summary.json", summary)
    if cfg.plots:
        plots.plot_trajectory(traj.slots, traj.total_queue, out / "trajectory.png",
                              title=f"{cfg.controller}, rate {cfg.arrival_rate}")
    state = "n/a" if verdict is None else ("stable" if verdict["stable"] else "unstable")
    click.echo(f"simulate: {len(traj)} slots, final queue {summary['final_total_queue']}, "
               f"verdict {state}")


def _run_sweep(cfg: ExperimentConfig, sample, compiled) -> dict:
    settings = _sweep_settings(cfg)
    frontiers = {}
    probes = {}
    for name in ("bp_star", "bp"):
        fr = find_x_max(compiled, name, sample, cfg.x_lo, cfg.x_hi, settings)
        frontiers[name] = fr
        probes[name] = fr.probes
    ratio = performance_ratio(frontiers["bp"].x_max, frontiers["bp_star"].x_max)
    return {"frontiers": frontiers, "probes": probes, "ratio": ratio}


def _write_probes_csv(path: Path, probes_by_controller: dict) -> None:
    with open(path, "w") as fh:
        fh.write("controller,x,stable,slope,peak_queue\n")
        for name, probes in sorted(probes_by_controller.items()):
            for p in probes:
                fh.write(f"{name},{p.x!r},{int(p.stable)},{p.slope!r},{p.peak_queue}\n")


@main.command()
@_common_options
@click.option("--x-lo", type=float, default=None, help="stable end of the bracket.")
@click.option("--x-hi", type=float, default=None, help="unstable end of the bracket.")
@click.option("--resolution", type=float, default=None, help="bisection resolution in x.")
@click.option("--replications", type=int, default=None,
              help="probes per point, majority-voted.")
@_handle_errors
def sweep(config_path, preset, master_seed, controller, out_dir, num_slots, workers,
          no_plots, x_lo, x_hi, resolution, replications):
    """Locate both controllers' stability frontiers on one arrival sample."""
    cfg = _build(config_path, preset, no_plots, master_seed=master_seed,
                 controller=controller, num_slots=num_slots, workers=workers,
                 x_lo=x_lo, x_hi=x_hi, resolution=resolution, replications=replications)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    net = cfg.build_network()
    compiled = CompiledNetwork(net)
    sample = uniform_sample(net, cfg.routing_straight, cfg.routing_left,
                            cfg.routing_right, cfg.routing_exit,
                            base_rate=1.0, seed=cfg.master_seed)
    result = _run_sweep(cfg, sample, compiled)

    _write_probes_csv(out / "probes.csv", result["probes"])
    x_max = {name: fr.x_max for name, fr in result["frontiers"].items()}
    summary = {
        "x_max": x_max,
        "slope_at_frontier": {name: (None if np.isnan(fr.slope_at_frontier)
                                     else fr.slope_at_frontier)
                              for name, fr in result["frontiers"].items()},
        "performance_ratio": result["ratio"],
        "config": cfg.resolved(),
    }
    _write_json(out / "summary.json", summary)
    if cfg.plots:
        plots.plot_sweep(result["probes"], x_max, out / "sweep.png")
    click.echo(f"sweep: x_max(bp_star)={x_max['bp_star']:.4f} "
               f"x_max(bp)={x_max['bp']:.4f} ratio={result['ratio']:.4f}")


def _one_sample_task(payload: dict) -> dict:
    """Worker for the sample study; must stay top-level for pickling."""
    cfg = ExperimentConfig(**payload["config"])
    sample_id = payload["sample_id"]
    net = cfg.build_network()
    compiled = CompiledNetwork(net)
    seed = _sample_seed(cfg.master_seed, sample_id)
    sample = generate_sample(net, seed)
    row: dict = {"sample_id": sample_id, "seed": seed}
    try:
        result = _run_sweep(cfg, sample, compiled)
        for name, fr in result["frontiers"].items():
            row[name] = {"x_max": fr.x_max, "slope_at_frontier": fr.slope_at_frontier}
        row["ratio"] = result["ratio"]
    except BracketError as exc:
        row["error"] = str(exc)
    return row


@main.command()
@_common_options
@click.option("--n-samples", type=int, default=None, help="number of random samples.")
@click.option("--x-lo", type=float, default=None)
@click.option("--x-hi", type=float, default=None)
@click.option("--resolution", type=float, default=None)
@_handle_errors
def samples(config_path, preset, master_seed, controller, out_dir, num_slots, workers,
            no_plots, n_samples, x_lo, x_hi, resolution):
    """Frontier ratios over randomly generated routing/arrival samples."""
    cfg = _build(config_path, preset, no_plots, master_seed=master_seed,
                 controller=controller, num_slots=num_slots, workers=workers,
                 n_samples=n_samples, x_lo=x_lo, x_hi=x_hi, resolution=resolution)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    payloads = [{"config": cfg.resolved(), "sample_id": i} for i in range(cfg.n_samples)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_one_sample_task, payloads))
    else:
        rows = [_one_sample_task(p) for p in payloads]
    rows.sort(key=lambda r: r["sample_id"])

    with open(out / "samples.csv", "w") as fh:
        fh.write("sample_id,controller,x_max,slope_at_frontier,seed\n")
        for row in rows:
            if "error" in row:
                continue
            for name in ("bp_star", "bp"):
                fh.write(f"{row['sample_id']},{name},{row[name]['x_max']!r},"
                         f"{row[name]['slope_at_frontier']!r},{row['seed']}\n")

    ratios = [row["ratio"] for row in rows if "ratio" in row]
    errors = [{"sample_id": row["sample_id"], "error": row["error"]}
              for row in rows if "error" in row]
    mean = float(np.mean(ratios)) if ratios else None
    std = float(np.std(ratios)) if ratios else None  # population convention
    summary = {
        "ratios": {str(row["sample_id"]): row.get("ratio") for row in rows},
        "mean_performance": mean,
        "stddev_performance": std,
        "errors": errors,
        "config": cfg.resolved(),
    }
    _write_json(out / "summary.json", summary)
    if cfg.plots and ratios:
        plots.plot_samples(ratios, mean, std, out / "samples.png")
    click.echo(f"samples: {len(ratios)}/{cfg.n_samples} ok, "
               f"mean performance {mean:.4f} (std {std:.4f})"
               if ratios else "samples: all failed")


@main.command()
@_common_options
@click.option("--lambdas", type=str, default=None,
              help="comma-separated per-node arrival rates.")
@click.option("--replications", "drift_replications", type=int, default=None)
@click.option("--heavy-init", type=int, default=None,
              help="initial count in every per-direction queue.")
@_handle_errors
def drift(config_path, preset, master_seed, controller, out_dir, num_slots, workers,
          no_plots, lambdas, drift_replications, heavy_init):
    """Heavy-load one-slot Lyapunov drift across an arrival-rate grid."""
    overrides: dict = {"master_seed": master_seed, "controller": controller,
                       "workers": workers, "drift_replications": drift_replications,
                       "heavy_init": heavy_init}
    if lambdas is not None:
        overrides["drift_lambdas"] = tuple(float(tok) for tok in lambdas.split(","))
    cfg = _build(config_path, preset, no_plots, **overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    net = cfg.build_network()
    compiled = CompiledNetwork(net)
    routing = cfg.uniform_routing(net)
    rows = []
    for lam in cfg.drift_lambdas:
        for ci, name in enumerate(("bp_star", "bp")):
            seed = int(np.random.SeedSequence(
                [cfg.master_seed, int(round(lam * 1_000_000)), ci]).generate_state(1)[0])
            est = estimate_drift(compiled, name, cfg.uniform_arrivals(lam), routing,
                                 cfg.effective_heavy_init(), cfg.drift_replications,
                                 seed, pressure=_pressure(cfg))
            rows.append({"lambda": lam, "controller": name,
                         "mean_drift": est.mean_drift,
                         "halfwidth": est.confidence_halfwidth,
                         "queue_mass": est.queue_mass_at_eval,
                         "replications": est.num_replications})

    with open(out / "drift.csv", "w") as fh:
        fh.write("lambda,controller,mean_drift,halfwidth\n")
        for r in rows:
            fh.write(f"{r['lambda']!r},{r['controller']},{r['mean_drift']!r},"
                     f"{r['halfwidth']!r}\n")
    _write_json(out / "summary.json", {"rows": rows, "config": cfg.resolved()})
    if cfg.plots:
        plots.plot_drift(rows, out / "drift.png")
    for r in rows:
        click.echo(f"drift: lambda={r['lambda']} {r['controller']}: "
                   f"{r['mean_drift']:.1f} +/- {r['halfwidth']:.1f}")


@main.command("gen-network")
@click.option("--rows", type=int, default=21)
@click.option("--cols", type=int, default=21)
@click.option("--saturation", type=int, default=10)
@click.option("--out", "out_dir", type=str, default="out")
@_handle_errors
def gen_network(rows, cols, saturation, out_dir):
    """Write the grid network description as a JSON document."""
    if rows < 1 or cols < 1 or saturation < 1:
        raise ConfigError("rows, cols and saturation must all be >= 1")
    net = build_grid_network(rows, cols, saturation)
    problems = validate_network(net)
    if problems:
        raise ConfigError("generated network failed validation: " + "; ".join(problems))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "network.json").write_text(net.to_json() + "\n")
    click.echo(f"gen-network: wrote {out / 'network.json'} "
               f"({len(net.nodes)} nodes, {len(net.junctions)} junctions)")


if __name__ == "__main__":
    main()
