import json
import math

import pytest

from lanebreak import io
from lanebreak.cli import main
from lanebreak.experiments import DEFAULTS, ConfigError, ScenarioConfig, validate

FAST = {
    "horizon": 20.0, "min_rounds": 0, "controller": {"variant": "fixed_duration", "T": 2.0},
    "analysis": {"nominal_horizon_c": 30.0, "nominal_horizon_u": 60.0},
}


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(FAST))
    return path


def test_empty_config_is_standard_setup():
    cfg = ScenarioConfig.from_dict({})
    p = cfg.params
    assert (p.circumference, p.alpha, p.beta, p.s_st, p.s_go, p.v_max) == (400, 0.6, 0.9, 5, 35, 30)
    assert cfg.raw["n"] == 20 and cfg.raw["dt"] == 0.01 and cfg.T == 30.0
    assert cfg.effective_horizon == 600.0
    assert cfg.with_T(120.0).effective_horizon == 6 * 240.0


def test_schema_errors_carry_field_paths():
    with pytest.raises(ConfigError) as exc:
        validate({"ovm": {"alpha": -1}, "controller": {"T": "x"}, "bogus": 1})
    msg = str(exc.value)
    assert "ovm.alpha" in msg and "controller.T" in msg and "<root>" in msg


def test_value_errors_become_config_errors():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"ovm": {"s_st": 40.0}})


def test_defaults_validate():
    validate(DEFAULTS)


def test_simulate_writes_artifacts(tmp_path, cfg_file):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(cfg_file), "--out", str(out), "--seed", "3"]) == 0
    for name in ("trajectory.csv", "variance.csv", "jumps.json", "summary.json", "rounds.csv",
                 "rounds.json", "gain.json", "bound_params.json"):
        assert (out / name).exists(), name
    head, rows = io.read_csv(out / "trajectory.csv")
    assert head.startswith("# lanebreak trajectory v")
    assert list(rows[0]) == ["time_s", "lane", "vehicle_index", "is_av", "position_m", "velocity_mps"]
    assert sum(int(r["is_av"]) for r in rows if r["time_s"] == rows[0]["time_s"]) == 1
    head, rows = io.read_csv(out / "variance.csv")
    assert head.startswith("# lanebreak variance v") and list(rows[0]) == ["time_s", "lane", "variance"]
    _, rows = io.read_csv(out / "rounds.csv")
    assert list(rows[0]) == ["round", "lane", "var_0", "delta_enter", "var_1", "delta_exit", "var_next",
                             "bound_var_1", "bound_var_next"]
    gain = io.read_json(out / "gain.json")
    assert set(gain) >= {"n", "equilibrium", "k"}
    jumps = io.read_json(out / "jumps.json")
    assert len(jumps) == 10 and jumps[0]["direction"] == "L->R"
    assert io.read_json(out / "summary.json")["seed"] == 3


def test_simulate_is_deterministic(tmp_path, cfg_file):
    for d in ("a", "b"):
        assert main(["simulate", "--config", str(cfg_file), "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_linearized_flag(tmp_path, cfg_file):
    assert main(["simulate", "--config", str(cfg_file), "--out", str(tmp_path), "--dynamics", "linearized"]) == 0
    assert io.read_json(tmp_path / "config.json")["dynamics"] == "linearized"


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"dt": -1}))
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["simulate", "--config", str(tmp_path / "broken.json")]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["simulate", "--dynamics", "quantum"]) == 2
    assert main(["nope"]) == 2
    assert main(["sweep", "--t-list", "a,b"]) == 2


def test_empty_t_list_is_config_error(tmp_path, cfg_file):
    assert main(["sweep", "--config", str(cfg_file), "--out", str(tmp_path), "--t-list", ""]) == 2
    assert main(["sweep", "--config", str(cfg_file), "--out", str(tmp_path), "--t-list", "2,-1"]) == 2


def test_runtime_error_exit_1(tmp_path):
    cfg = tmp_path / "c.json"
    # free-flow ring (headway above s_go) cannot be stabilized
    cfg.write_text(json.dumps({**FAST, "n": 6}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_sweep_aggregate_matches_runs(tmp_path, cfg_file):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg_file), "--out", str(out), "--t-list", "1.5,2"]) == 0
    _, rows = io.read_csv(out / "sweep.csv")
    assert [float(r["T"]) for r in rows] == [1.5, 2.0]
    for r in rows:
        summ = io.read_json(out / f"T_{float(r['T']):g}" / "summary.json")
        assert float(r["mean_delta_exit"]) == summ["delta_exit_mean"]
        assert r["regime"] == summ["regime"]


def test_sweep_isolates_failures(tmp_path, cfg_file, monkeypatch):
    from lanebreak import experiments
    real = experiments.run_scenario

    def flaky(cfg, out_dir=None, params=None):
        if cfg.T == 1.5:
            raise RuntimeError("boom")
        return real(cfg, out_dir, params)

    monkeypatch.setattr(experiments, "run_scenario", flaky)
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg_file), "--out", str(out), "--t-list", "1.5,2"]) == 1
    _, rows = io.read_csv(out / "sweep.csv")
    assert [float(r["T"]) for r in rows] == [2.0]
    assert "boom" in io.read_json(out / "sweep.json")["errors"]["1.5"]


def test_fit_and_bounds_verbs(tmp_path, cfg_file):
    out = tmp_path / "x"
    assert main(["fit", "--config", str(cfg_file), "--out", str(out)]) == 0
    params = out / "bound_params.json"
    assert io.read_json(params)["alpha2"] > 0
    assert main(["simulate", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert main(["bounds", "--config", str(cfg_file), "--out", str(out), "--params", str(params),
                 "--jumps", str(out / "jumps.json")]) == 0
    head, rows = io.read_csv(out / "bounds.csv")
    assert head.startswith("# lanebreak bounds v") and rows


def test_jump_table_verb(tmp_path, cfg_file):
    assert main(["jump-table", "--config", str(cfg_file), "--out", str(tmp_path), "--t-list", "2"]) == 0
    _, rows = io.read_csv(tmp_path / "jump_table.csv")
    assert len(rows) == 1 and math.isfinite(float(rows[0]["delta_exit_mean"]))
