import hashlib
import json

from click.testing import CliRunner

from bpsignal.cli import main


def run(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def tiny_config(tmp_path, **extra):
    doc = {
        "rows": 1, "cols": 2, "saturation": 10,
        "num_slots": 400, "master_seed": 99,
        "x_lo": 0.5, "x_hi": 12.0, "resolution": 1.0,
        "early_abort_factor": None,
    }
    doc.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_simulate_row_count_contract(tmp_path):
    out = tmp_path / "o"
    res = run(["simulate", "--preset", "uniform-0.4", "--slots", "100",
               "--seed", "5", "--out", str(out)])
    assert res.exit_code == 0
    lines = (out / "trajectory.csv").read_text().strip().split("\n")
    assert len(lines) == 101  # header + one row per slot
    assert (out / "summary.json").exists()
    assert (out / "trajectory.png").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["arrival_rate"] == 0.4
    assert summary["verdict"] is None  # too short to classify
    assert summary["final_total_queue"] == summary["total_arrivals"] - summary["total_exits"]


def test_simulate_no_plots_flag(tmp_path):
    out = tmp_path / "o"
    res = run(["simulate", "--preset", "uniform-0.4", "--slots", "50",
               "--out", str(out), "--no-plots"])
    assert res.exit_code == 0
    assert not (out / "trajectory.png").exists()


def test_simulate_byte_identical_csv_for_same_seed(tmp_path):
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        res = run(["simulate", "--preset", "uniform-0.5", "--slots", "300",
                   "--seed", "1234", "--out", str(out), "--no-plots"])
        assert res.exit_code == 0
        digests.append(hashlib.sha256((out / "trajectory.csv").read_bytes()).hexdigest())
    assert digests[0] == digests[1]


def test_simulate_dump_every(tmp_path):
    out = tmp_path / "o"
    res = run(["simulate", "--preset", "uniform-0.4", "--slots", "100",
               "--out", str(out), "--dump-every", "40", "--no-plots"])
    assert res.exit_code == 0
    lines = (out / "state_dumps.jsonl").read_text().strip().split("\n")
    assert len(lines) == 2  # slots 40 and 80
    doc = json.loads(lines[0])
    assert doc["slot"] == 40
    assert all(len(entry) == 3 for entry in doc["q"])


def test_simulate_with_network_file(tmp_path):
    gen_out = tmp_path / "net"
    assert run(["gen-network", "--rows", "2", "--cols", "2", "--out", str(gen_out)]).exit_code == 0
    cfg = tiny_config(tmp_path, network_file=str(gen_out / "network.json"))
    out = tmp_path / "o"
    res = run(["simulate", "--config", cfg, "--slots", "50", "--out", str(out),
               "--no-plots"])
    assert res.exit_code == 0


def test_unknown_preset_is_config_error():
    runner = CliRunner()
    res = runner.invoke(main, ["simulate", "--preset", "nope", "--out", "/tmp/x"])
    assert res.exit_code == 1


def test_unknown_config_field_is_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"rows": 2, "not_a_field": 1}))
    res = CliRunner().invoke(main, ["simulate", "--config", str(path), "--out", "/tmp/x"])
    assert res.exit_code == 1
    assert "not_a_field" in res.output


def test_invalid_field_value_is_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"controller": "magic"}))
    res = CliRunner().invoke(main, ["simulate", "--config", str(path), "--out", "/tmp/x"])
    assert res.exit_code == 1
    assert "controller" in res.output


def test_sweep_degenerate_1x1_grid(tmp_path):
    cfg = tiny_config(tmp_path, rows=1, cols=1, num_slots=10_000,
                      x_lo=1.0, x_hi=12.0, resolution=1.0,
                      early_abort_factor=0.25)
    out = tmp_path / "o"
    res = run(["sweep", "--config", cfg, "--out", str(out)])
    assert res.exit_code == 0
    lines = (out / "probes.csv").read_text().strip().split("\n")
    assert lines[0] == "controller,x,stable,slope,peak_queue"
    assert len(lines) > 2
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["x_max"]) == {"bp_star", "bp"}
    assert summary["performance_ratio"] > 0
    assert (out / "sweep.png").exists()


def test_sweep_bracket_error_exit_code(tmp_path):
    # a single junction is stable far beyond x_hi=2 -> bracket error -> exit 2
    cfg = tiny_config(tmp_path, rows=1, cols=1, num_slots=10_000,
                      x_lo=0.5, x_hi=2.0, early_abort_factor=0.25)
    res = CliRunner().invoke(main, ["sweep", "--config", cfg, "--out", str(tmp_path / "o")])
    assert res.exit_code == 2


def test_samples_single_sample_population_stddev(tmp_path):
    cfg = tiny_config(tmp_path, rows=1, cols=1, num_slots=10_000,
                      x_lo=0.5, x_hi=30.0, resolution=2.0, early_abort_factor=0.25)
    out = tmp_path / "o"
    res = run(["samples", "--config", cfg, "--n-samples", "1", "--out", str(out)])
    assert res.exit_code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["stddev_performance"] == 0.0
    lines = (out / "samples.csv").read_text().strip().split("\n")
    assert lines[0] == "sample_id,controller,x_max,slope_at_frontier,seed"
    assert len(lines) == 3  # two controllers for the one sample


def test_samples_byte_identical_outputs(tmp_path):
    cfg = tiny_config(tmp_path, rows=1, cols=1, num_slots=10_000,
                      x_lo=0.5, x_hi=30.0, resolution=4.0, early_abort_factor=0.25)
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        res = run(["samples", "--config", cfg, "--n-samples", "1", "--out", str(out),
                   "--no-plots"])
        assert res.exit_code == 0
        blob = (out / "samples.csv").read_bytes() + (out / "summary.json").read_bytes()
        digests.append(hashlib.sha256(blob).hexdigest())
    assert digests[0] == digests[1]


def test_drift_command_and_signs(tmp_path):
    # positive drift needs arrivals to dominate heavy-load service; on the
    # 3x3 that happens around lambda ~ 20 per node (lambda=2 sits at the
    # crossover, see the acceptance notes)
    cfg = tiny_config(tmp_path, rows=3, cols=3, drift_replications=60,
                      drift_lambdas=[0.0, 0.4, 20.0])
    out = tmp_path / "o"
    res = run(["drift", "--config", cfg, "--out", str(out)])
    assert res.exit_code == 0
    lines = (out / "drift.csv").read_text().strip().split("\n")
    assert lines[0] == "lambda,controller,mean_drift,halfwidth"
    assert len(lines) == 7  # 3 lambdas x 2 controllers
    rows = json.loads((out / "summary.json").read_text())["rows"]
    by_key = {(r["lambda"], r["controller"]): r for r in rows}
    assert by_key[(0.0, "bp")]["mean_drift"] < 0
    assert by_key[(0.4, "bp")]["mean_drift"] < 0
    assert by_key[(20.0, "bp")]["mean_drift"] > 0
    assert (out / "drift.png").exists()


def test_drift_rejects_too_few_replications(tmp_path):
    cfg = tiny_config(tmp_path, rows=3, cols=3)
    res = CliRunner().invoke(main, ["drift", "--config", cfg, "--replications", "1",
                                    "--out", str(tmp_path / "o")])
    assert res.exit_code == 1


def test_summary_config_round_trip_reproduces_csv(tmp_path):
    out1 = tmp_path / "first"
    res = run(["simulate", "--preset", "uniform-0.5", "--slots", "300",
               "--seed", "31", "--out", str(out1), "--no-plots"])
    assert res.exit_code == 0
    resolved = json.loads((out1 / "summary.json").read_text())["config"]
    cfg_path = tmp_path / "resolved.json"
    cfg_path.write_text(json.dumps(resolved))
    out2 = tmp_path / "second"
    res = run(["simulate", "--config", str(cfg_path), "--out", str(out2),
               "--no-plots"])
    assert res.exit_code == 0
    assert (out1 / "trajectory.csv").read_bytes() == \
        (out2 / "trajectory.csv").read_bytes()


def test_uniform_presets_encode_published_parameters():
    from bpsignal.config import PRESETS, make_config
    rates = (0.4, 0.5, 0.6, 0.65, 0.7, 0.75, 0.8, 0.9)
    assert sorted(PRESETS) == sorted(f"uniform-{r:g}" for r in rates)
    for rate in rates:
        cfg = make_config(preset=f"uniform-{rate:g}")
        assert cfg.arrival_rate == rate
        assert (cfg.rows, cfg.cols, cfg.saturation) == (21, 21, 10)
        assert (cfg.routing_straight, cfg.routing_left,
                cfg.routing_right, cfg.routing_exit) == (0.5, 0.2, 0.2, 0.1)
        assert (cfg.batch_probability, cfg.batch_size) == (0.05, 10)
        assert cfg.pressure_slope == 1.0
        assert cfg.num_slots == 50_000


def test_gen_network_roundtrip(tmp_path):
    out = tmp_path / "n"
    res = run(["gen-network", "--rows", "3", "--cols", "2", "--saturation", "7",
               "--out", str(out)])
    assert res.exit_code == 0
    from bpsignal import Network, validate_network
    net = Network.from_json((out / "network.json").read_text())
    assert len(net.junctions) == 6
    assert all(s == 7 for s in net.saturation.values())
    assert validate_network(net) == []


def test_gen_network_rejects_bad_dims(tmp_path):
    res = CliRunner().invoke(main, ["gen-network", "--rows", "0", "--out",
                                    str(tmp_path / "n")])
    assert res.exit_code == 1
