import csv
import json
import math

import pytest
from numpy.testing import assert_allclose

from coopsync.cli import main
from coopsync.config import (ConfigError, Schedule, config_from_text, dump_config, load_config,
                             make_parking_scenario, reference_random_scenario)
from coopsync.experiment import run_experiment
from coopsync.metrics import empirical_cdf, rmse


def test_rmse_examples():
    assert_allclose(rmse([3, 4]), math.sqrt(12.5), rtol=1e-15)
    assert_allclose(rmse([3, 4]), 3.5355, atol=1e-4)
    assert rmse([0, 0, 0]) == 0
    assert rmse([5]) == 5
    assert rmse([-2]) == 2
    with pytest.raises(ValueError):
        rmse([])


def test_cdf_examples():
    assert empirical_cdf([3, 1, 2, 2]) == [(1.0, 0.25), (2.0, 0.75), (3.0, 1.0)]
    assert empirical_cdf([7]) == [(7.0, 1.0)]
    with pytest.raises(ValueError):
        empirical_cdf([])


@pytest.fixture
def small_config(tmp_path):
    cfg = reference_random_scenario(n_agents=5, n_time=3, trials=2, seed=17, schedule=Schedule(1, 4))
    path = tmp_path / "small.yaml"
    dump_config(cfg, path)
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_four_files_with_schemas(small_config, tmp_path):
    res = run_experiment(small_config, tmp_path / "out")
    names = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert names == ["cdf.csv", "comm.json", "rmse.csv", "trace.csv"]
    rm = _rows(res.files["rmse.csv"])
    assert list(rm[0]) == ["trial", "slot", "iteration", "pos_rmse_m", "clock_rmse_s", "clock_rmse_m"]
    assert len(rm) == 2 * 3 * 4
    cdf = _rows(res.files["cdf.csv"])
    assert list(cdf[0]) == ["metric", "value", "fraction"]
    for metric in ("position_m", "clock_s"):
        fr = [float(r["fraction"]) for r in cdf if r["metric"] == metric]
        assert fr[-1] == 1.0 and fr == sorted(fr)
    tr = _rows(res.files["trace.csv"])
    assert list(tr[0]) == ["trial", "slot", "id", "role", "x", "y", "theta", "x_est", "y_est", "theta_est",
                           "nlos_links"]
    n_nodes = 5 + len(res.config.anchors)
    assert len(tr) == 2 * 3 * n_nodes


def test_comm_json_matches_closed_form(small_config, tmp_path):
    res = run_experiment(small_config, tmp_path / "out")
    comm = json.loads(res.files["comm.json"].read_text())
    expected = 0
    for tr in res.trials:
        for slot in tr.simulation.slots:
            expected += 6 * sum(slot.degree(i) for i in slot.agents) * 4
    assert comm["transmitted_params"] == comm["analytic_params"] == expected
    assert comm["algorithm"] == "std-bp" and comm["n_ext"] == 4
    assert sum(comm["per_node"].values()) == expected


@pytest.mark.parametrize("algorithm", ["bcast-bp", "vmp"])
def test_comm_json_other_algorithms(small_config, tmp_path, algorithm):
    res = run_experiment(small_config, tmp_path / algorithm, algorithm=algorithm)
    comm = json.loads(res.files["comm.json"].read_text())
    per = 6 if algorithm == "bcast-bp" else 3
    assert comm["transmitted_params"] == comm["analytic_params"] == per * 5 * 4 * 3 * 2


def test_determinism_byte_identical(small_config, tmp_path):
    a = run_experiment(small_config, tmp_path / "a")
    b = run_experiment(small_config, tmp_path / "b")
    for name in a.files:
        assert a.files[name].read_bytes() == b.files[name].read_bytes()
    c = run_experiment(small_config, tmp_path / "c", seed=18)
    assert c.files["trace.csv"].read_bytes() != a.files["trace.csv"].read_bytes()


def test_parking_trace_has_nlos_links(tmp_path):
    cfg = make_parking_scenario(n_time=2, trials=1, schedule=Schedule(1, 3))
    path = tmp_path / "parking.yaml"
    dump_config(cfg, path)
    res = run_experiment(path, tmp_path / "out")
    assert sum(int(r["nlos_links"]) for r in _rows(res.files["trace.csv"])) > 0


def test_yaml_round_trip(tmp_path):
    for cfg in (reference_random_scenario(), make_parking_scenario()):
        path = tmp_path / "c.yaml"
        dump_config(cfg, path)
        assert load_config(path) == cfg


def test_config_errors_carry_line_and_field():
    with pytest.raises(ConfigError) as e:
        config_from_text("n_agents: 4\nd_max: -3\n")
    assert e.value.field == "d_max" and e.value.line == 2
    with pytest.raises(ConfigError) as e:
        config_from_text("n_agents: 4\nnoise:\n  sigma_d: 1\n  colour: red\n")
    assert e.value.field == "noise.colour" and e.value.line == 4
    with pytest.raises(ConfigError) as e:
        config_from_text("schedule:\n  n_int: 0\n")
    assert e.value.field == "schedule.n_int" and e.value.line == 2
    with pytest.raises(ConfigError) as e:
        config_from_text("bounds: [1, 2\n")
    assert e.value.line is not None


def test_cli_exit_codes(small_config, tmp_path, capsys):
    assert main([str(small_config), str(tmp_path / "out"), "--trials", "1"]) == 0
    assert (tmp_path / "out" / "comm.json").exists()
    bad = tmp_path / "bad.yaml"
    bad.write_text("d_max: 0\n")
    assert main([str(bad), str(tmp_path / "o2")]) == 2
    assert "d_max" in capsys.readouterr().err
    assert main([str(small_config), str(tmp_path / "o3"), "--trials", "0"]) == 2
    assert main([str(tmp_path / "missing.yaml"), str(tmp_path / "o4")]) == 4
    with pytest.raises(SystemExit):
        main([str(small_config), str(tmp_path / "o5"), "--algorithm", "ep"])
