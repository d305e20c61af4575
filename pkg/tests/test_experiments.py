import glob
import json
import os

import numpy as np
import pytest
import yaml

from opinionlab.dynamics import (
    DeGroot,
    DistortionModel,
    EpsilonDeGroot,
    InitialDistribution,
    SimConfig,
    run,
)
from opinionlab.experiments import (
    ExperimentConfig,
    ExperimentError,
    SCENARIOS,
    config_from_dict,
    load_config,
    majority_vote_reference,
    run_scenario,
    validate,
)
from opinionlab.graphs import GraphSpec, generate
from opinionlab.plots import emit_plots
from opinionlab.recording import (
    load_trajectory,
    save_trajectory,
    write_probe_csv,
    write_summary_json,
)
from opinionlab import cli

PRESET_DIR = os.path.join(os.path.dirname(__file__), "..", "presets")


def uniform_init(mu=0.5, k=0.5):
    return InitialDistribution(mu=mu, noise="uniform", k=k)


def small_config(scenario, **kw):
    base = dict(scenario=scenario, graph=GraphSpec("torus", w=7, h=7),
                init=uniform_init(), seed=5, horizon=500)
    base.update(kw)
    return ExperimentConfig(**base)


# -- config and validation ----------------------------------------------------------

def test_all_presets_validate():
    presets = sorted(glob.glob(os.path.join(PRESET_DIR, "*.yaml")))
    assert len(presets) == 8
    for path in presets:
        cfg = load_config(path)
        assert validate(cfg) == [], path


def test_validate_beta_must_stay_below_gamma():
    cfg = small_config("lyapunov-audit", rule=EpsilonDeGroot(0.1),
                       distortion=DistortionModel("plus_bias", 0.05),
                       params={"gamma": 0.05})
    diags = validate(cfg)
    assert any("beta" in d for d in diags)


def test_validate_gamma_below_eps():
    cfg = small_config("lyapunov-audit", rule=EpsilonDeGroot(0.1),
                       params={"gamma": 0.2})
    diags = validate(cfg)
    assert any("gamma" in d for d in diags)


def test_validate_unknown_scenario():
    cfg = small_config("not-a-scenario")
    assert any("unknown scenario" in d for d in validate(cfg))
    with pytest.raises(ExperimentError):
        run_scenario(cfg)


def test_validate_exempt_radius_vs_graph_radius():
    cfg = small_config("robust-bot", bots=((0, 1.0),), exempt_radius=10)
    assert any("radius" in d for d in validate(cfg))


def test_config_roundtrip_through_yaml(tmp_path):
    cfg = small_config("robust-bot", bots=((0, 1.0),),
                       params={"eps_sweep": [0.05, 0.02]})
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict()))
    loaded = load_config(str(path))
    assert loaded.to_dict() == cfg.to_dict()


def test_config_from_dict_defaults():
    cfg = config_from_dict({
        "scenario": "rw-decay",
        "graph": {"kind": "path", "n": 101},
        "init": {"mu": 0.5},
        "seed": 3,
    })
    assert cfg.replications == 1
    assert cfg.distortion.kind == "none"


# -- scenario registry ----------------------------------------------------------------

def test_registry_contains_all_scenarios():
    assert set(SCENARIOS) == {
        "fragility-bot", "fragility-bias", "robust-bot", "robust-distortion",
        "granular-majority", "rw-decay", "lyapunov-audit", "eps-sweep",
    }


def test_fragility_bot_small():
    cfg = ExperimentConfig(scenario="fragility-bot", graph=GraphSpec("path", n=15),
                           init=InitialDistribution(mu=0.0, noise="degenerate"),
                           seed=1, horizon=100_000, bots=((0, 1.0),),
                           params={"checkpoints": [10, 100, 1000]})
    result = run_scenario(cfg)
    assert result.passed
    assert result.metrics["oracle_worst_abs_err"] <= 1e-9
    assert 0 < result.metrics["stop_time"] <= 100_000


def test_fragility_bias_small():
    cfg = ExperimentConfig(scenario="fragility-bias", graph=GraphSpec("torus", w=7, h=7),
                           init=uniform_init(), seed=1, horizon=5000,
                           distortion=DistortionModel("plus_bias", 0.01),
                           params={"gain": 2.0})
    result = run_scenario(cfg)
    assert result.passed
    assert result.metrics["crossing_time"] > 0


def test_granular_majority_small():
    cfg = ExperimentConfig(scenario="granular-majority",
                           graph=GraphSpec("random_regular", n=24, degree=3, seed=1),
                           init=InitialDistribution(mu=0.5, noise="two_point", k=0.5),
                           seed=2, horizon=50, params={"n_graphs": 8, "steps": 50})
    result = run_scenario(cfg)
    assert result.passed
    assert result.metrics["mismatches"] == 0
    assert result.metrics["gamma"] == 0.25


def test_majority_reference_is_majority():
    g = generate(GraphSpec("random_regular", n=20, degree=4, seed=3))
    rng = np.random.default_rng(0)
    init = (rng.random(g.n) < 0.5).astype(np.int64)
    layers = majority_vote_reference(g, init, 10)
    # hand-check one update at one node
    for t in (1, 5, 10):
        for i in (0, 7, 19):
            votes = layers[t - 1][g.neighbors(i)]
            ones = int(votes.sum())
            zeros = votes.size - ones
            if ones > zeros:
                assert layers[t][i] == 1
            elif zeros > ones:
                assert layers[t][i] == 0
            else:
                prev2 = layers[t - 2][i] if t >= 2 else layers[0][i]
                assert layers[t][i] == prev2


def test_rw_decay_small():
    cfg = ExperimentConfig(scenario="rw-decay", graph=GraphSpec("path", n=401),
                           init=InitialDistribution(mu=0.5, noise="degenerate"),
                           seed=1, horizon=200,
                           params={"origin": 200, "t_min": 50, "t_max": 200,
                                   "slope_lo": -0.6, "slope_hi": -0.4})
    result = run_scenario(cfg)
    assert result.passed
    assert "pt_decay" in result.series


def test_lyapunov_audit_small():
    cfg = ExperimentConfig(scenario="lyapunov-audit",
                           graph=GraphSpec("random_regular", n=50, degree=3, seed=2),
                           init=uniform_init(), seed=5, horizon=400,
                           rule=EpsilonDeGroot(0.05),
                           params={"gamma": 0.045, "seeds": 2, "centers": [0, 25]})
    result = run_scenario(cfg)
    assert result.passed
    assert all(a.passed for a in result.audits)
    assert any(name.startswith("lyapunov_") for name in result.series)


def test_eps_sweep_small():
    cfg = ExperimentConfig(scenario="eps-sweep", graph=GraphSpec("torus", w=11, h=11),
                           init=uniform_init(), seed=9, horizon=2500, replications=4,
                           params={"eps_sweep": [0.05, 0.02]})
    result = run_scenario(cfg)
    assert result.passed
    errs = result.metrics["mean_errors"]
    assert errs[1] <= errs[0]


def test_robust_bot_small():
    cfg = ExperimentConfig(scenario="robust-bot", graph=GraphSpec("torus", w=15, h=15),
                           init=uniform_init(), seed=11, horizon=2500, replications=4,
                           bots=((0, 1.0),), delta=0.3,
                           params={"eps_sweep": [0.05, 0.02]})
    result = run_scenario(cfg)
    assert result.passed
    assert result.metrics["max_frequency_at_smallest"] <= 0.3


def test_robust_distortion_small():
    cfg = ExperimentConfig(scenario="robust-distortion",
                           graph=GraphSpec("torus", w=15, h=15),
                           init=uniform_init(), seed=11, horizon=2500,
                           replications=2, bots=((0, 1.0),), delta=0.3,
                           params={"eps_sweep": [0.02, 0.01], "window": 100})
    result = run_scenario(cfg)
    bracket = [a for a in result.audits if a.condition == "Bracketing"][0]
    assert bracket.passed
    assert result.metrics["min_bracket_margin"] >= 0.0
    trend = [a for a in result.audits if a.condition == "SweepTrend"][0]
    assert trend.passed
    assert result.passed


# -- result files -----------------------------------------------------------------------

def test_result_files_byte_identical(tmp_path):
    def go(sub):
        cfg = ExperimentConfig(scenario="rw-decay", graph=GraphSpec("path", n=201),
                               init=InitialDistribution(mu=0.5, noise="degenerate"),
                               seed=1, horizon=100,
                               output_dir=str(tmp_path / sub),
                               params={"origin": 100, "t_min": 20, "t_max": 100,
                                       "slope_lo": -0.7, "slope_hi": -0.3})
        run_scenario(cfg)
        return {
            name: (tmp_path / sub / name).read_bytes()
            for name in os.listdir(tmp_path / sub)
        }

    a = go("a")
    b = go("b")
    # provenance echoes the differing output_dir; metric and series tables
    # must be byte-identical
    assert a.keys() == b.keys()
    assert a["metrics.csv"] == b["metrics.csv"]
    assert a["series_pt_decay.csv"] == b["series_pt_decay.csv"]
    ra = json.loads(a["result.json"])
    rb = json.loads(b["result.json"])
    ra["provenance"]["config"].pop("output_dir")
    rb["provenance"]["config"].pop("output_dir")
    assert ra["metrics"] == rb["metrics"]
    assert ra["audits"] == rb["audits"]
    assert ra["provenance"]["config"] == rb["provenance"]["config"]


def test_result_json_embeds_config(tmp_path):
    cfg = ExperimentConfig(scenario="granular-majority",
                           graph=GraphSpec("random_regular", n=20, degree=3, seed=1),
                           init=InitialDistribution(mu=0.5, noise="two_point", k=0.5),
                           seed=2, horizon=30, output_dir=str(tmp_path),
                           params={"n_graphs": 3, "steps": 30})
    run_scenario(cfg)
    with open(tmp_path / "result.json") as fh:
        payload = json.load(fh)
    assert payload["provenance"]["config"]["scenario"] == "granular-majority"
    assert payload["provenance"]["seed"] == 2
    assert "config_hash" in payload["provenance"]


# -- recording --------------------------------------------------------------------------

def traj_small():
    spec = GraphSpec("torus", w=5, h=5)
    g = generate(spec)
    cfg = SimConfig(graph=spec, rule=EpsilonDeGroot(0.05), init=uniform_init(),
                    horizon=120, seed=3, record="full", probes=(0, 12))
    return run(cfg, graph=g), g


def test_trajectory_npz_roundtrip(tmp_path):
    traj, g = traj_small()
    path = str(tmp_path / "traj.npz")
    save_trajectory(traj, g, path)
    opinions, g2, meta = load_trajectory(path)
    assert np.array_equal(opinions, traj.full)
    assert np.array_equal(g2.edges, g.edges)
    assert meta["seed"] == 3
    assert meta["config"]["rule"] == {"kind": "eps_degroot", "eps": 0.05}


def test_probe_csv_and_summary(tmp_path):
    spec = GraphSpec("path", n=9)
    cfg = SimConfig(graph=spec, rule=DeGroot(), init=uniform_init(),
                    horizon=20, seed=4, record="probes", probes=(0, 4, 8))
    traj = run(cfg)
    csv_path = tmp_path / "probes.csv"
    write_probe_csv(traj, str(csv_path))
    lines = csv_path.read_text().splitlines()
    assert lines[0].startswith("# {")
    assert json.loads(lines[0][2:])["seed"] == 4
    assert lines[1] == "t,agent_id,opinion"
    assert len(lines) == 2 + 21 * 3
    summary_path = tmp_path / "summary.json"
    write_summary_json(traj, str(summary_path))
    payload = json.loads(summary_path.read_text())
    assert payload["final"]["t"] == 20
    assert 0.0 <= payload["final"]["mean"] <= 1.0


# -- plots ------------------------------------------------------------------------------

def test_emit_plots(tmp_path):
    cfg = ExperimentConfig(scenario="rw-decay", graph=GraphSpec("path", n=201),
                           init=InitialDistribution(mu=0.5, noise="degenerate"),
                           seed=1, horizon=100, output_dir=str(tmp_path),
                           params={"origin": 100, "t_min": 20, "t_max": 100,
                                   "slope_lo": -0.7, "slope_hi": -0.3})
    run_scenario(cfg)
    files = emit_plots(str(tmp_path))
    assert files
    for f in files:
        assert os.path.exists(f) and f.endswith(".png")


# -- CLI --------------------------------------------------------------------------------

def test_cli_validate_ok(capsys):
    rc = cli.main(["validate", os.path.join(PRESET_DIR, "rw-decay.yaml")])
    assert rc == 0
    assert "config OK" in capsys.readouterr().out


def test_cli_validate_rejects(tmp_path, capsys):
    bad = {"scenario": "robust-bot", "graph": {"kind": "torus", "w": 2, "h": 2},
           "init": {"mu": 0.5, "noise": "uniform", "k": 0.5}, "seed": 1}
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(bad))
    rc = cli.main(["validate", str(path)])
    assert rc == 1
    assert "error:" in capsys.readouterr().out


def test_cli_run_and_plot(tmp_path, capsys):
    cfg = {"scenario": "granular-majority",
           "graph": {"kind": "random_regular", "n": 20, "degree": 3, "seed": 1},
           "init": {"mu": 0.5, "noise": "two_point", "k": 0.5},
           "seed": 2, "horizon": 30, "params": {"n_graphs": 3, "steps": 30}}
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out_dir = tmp_path / "out"
    rc = cli.main(["run", str(path), "--output", str(out_dir)])
    assert rc == 0
    assert (out_dir / "result.json").exists()
    captured = capsys.readouterr().out
    assert "PASS" in captured


def test_cli_audit(tmp_path, capsys):
    traj, g = traj_small()
    traj_path = str(tmp_path / "traj.npz")
    save_trajectory(traj, g, traj_path)
    params_path = tmp_path / "params.json"
    params_path.write_text(json.dumps({"eps": 0.05, "gamma": 0.045,
                                       "centers": [0, 12]}))
    report_path = str(tmp_path / "report.json")
    rc = cli.main(["audit", traj_path, str(params_path), "--out", report_path])
    assert rc == 0
    payload = json.loads(open(report_path).read())
    assert {r["condition"] for r in payload} == {"A2", "A3", "Lyapunov", "Variation"}
    assert all(r["passed"] for r in payload)


def test_cli_audit_flags_degroot_trajectory(tmp_path):
    spec = GraphSpec("torus", w=5, h=5)
    g = generate(spec)
    cfg = SimConfig(graph=spec, rule=DeGroot(), init=uniform_init(),
                    horizon=60, seed=3, record="full")
    traj = run(cfg, graph=g)
    traj_path = str(tmp_path / "traj.npz")
    save_trajectory(traj, g, traj_path)
    params_path = tmp_path / "params.json"
    params_path.write_text(json.dumps({"eps": 0.02, "gamma": 0.019}))
    rc = cli.main(["audit", traj_path, str(params_path)])
    assert rc == 1
