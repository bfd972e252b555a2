import json
import shutil
import subprocess

import numpy as np
import pytest

from bailout import config
from bailout.cli import run
from bailout.single_regime import npv

from conftest import MODELS, brownian_problem

BROWNIAN = str(MODELS / "brownian_single.json")
TWO_STATE = str(MODELS / "two_state.json")


def read_csv(path):
    lines = path.read_text().splitlines()
    header = [l for l in lines if l.startswith("#")]
    cols = header[-1][2:].split(",")
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return header, cols, data


def test_check_on_demo_model(tmp_path, capsys):
    assert run(["check", "--model", TWO_STATE, "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "check.json").read_text())
    assert rep["ok"] and all(c["passed"] for c in rep["checks"])
    assert "FAIL" not in capsys.readouterr().out


def test_solve_single_reports_threshold(tmp_path):
    assert run(["solve-single", "--model", BROWNIAN, "--out", str(tmp_path)]) == 0
    sol = json.loads((tmp_path / "solution.json").read_text())
    assert sol["b_star"] > 0 and abs(sol["g_residual"]) < 1e-9 and sol["ok"]
    header, cols, data = read_csv(tmp_path / "value.csv")
    assert cols == ["x", "v", "v_prime"]
    assert data.shape == (801, 3)
    # 17 significant digits: the file reproduces the library values exactly
    np.testing.assert_array_equal(data[:, 1], npv(brownian_problem(), sol["b_star"], data[:, 0]))


def test_solve_regime_then_simulate(tmp_path):
    assert run(["solve-regime", "--model", TWO_STATE, "--out", str(tmp_path)]) == 0
    sol = json.loads((tmp_path / "solution.json").read_text())
    assert sol["fixed_point_residual"] < 1e-6
    for name in ("cl1", "cl2"):
        _, cols, data = read_csv(tmp_path / f"value_{name}.csv")
        assert cols == ["x", "V", "V_prime"]
        np.testing.assert_array_equal(data[:, 1], sol["values"][name])
    _, cols, trace = read_csv(tmp_path / "trace.csv")
    assert cols == ["iteration", "sup_norm_change"] and trace.shape[0] == sol["diagnostics"]["iterations"]
    code = run(["simulate", "--model", TWO_STATE, "--out", str(tmp_path), "--solution", str(tmp_path / "solution.json"),
                "--paths", "40000", "--set", "run.x=1.0"])
    assert code == 0
    comp = json.loads((tmp_path / "comparison.json").read_text())
    assert comp["abs_diff"] < 3 * comp["mc_stderr"]
    assert comp["within_3_stderr"]
    est = json.loads((tmp_path / "estimate.json").read_text())
    assert est["path_config"]["n_paths"] == 40000
    assert {"mean", "stderr", "dividends", "injections", "payoff"} <= set(est["estimate"])


def test_scale_table(tmp_path):
    assert run(["scale", "--model", BROWNIAN, "--out", str(tmp_path), "--grid-points", "51", "--x-max", "4"]) == 0
    _, cols, data = read_csv(tmp_path / "scale_table.csv")
    assert cols == ["x", "W", "W_prime", "Z", "Wbar", "Zbar", "W_refracted", "Wbar_refracted"]
    assert data.shape == (51, 8) and data[-1, 0] == 4.0
    rep = json.loads((tmp_path / "self_check.json").read_text())
    assert rep["max_residual"] < 1e-8


def test_artifacts_name_units_mapping_and_config(tmp_path):
    run(["solve-single", "--model", BROWNIAN, "--out", str(tmp_path)])
    header, _, _ = read_csv(tmp_path / "value.csv")
    text = "\n".join(header)
    assert "units:" in text and "mapping:" in text and "alpha = q + r" in text
    cfg_line = next(l for l in header if l.startswith("# config: "))
    assert json.loads(cfg_line[len("# config: "):]) == json.loads((tmp_path / "config.json").read_text())
    meta = json.loads((tmp_path / "solution.json").read_text())["meta"]
    assert meta["units"] and meta["config"]["auxiliary"]["beta"] == 1.5


def test_round_trip_through_config_echo(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert run(["solve-regime", "--model", TWO_STATE, "--out", str(first), "--tol", "1e-7", "--grid-points", "401"]) == 0
    assert run(["solve-regime", "--model", str(first / "config.json"), "--out", str(second)]) == 0
    for name in ("value_cl1.csv", "value_cl2.csv", "trace.csv", "solution.json", "config.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_simulation_round_trip_is_bit_identical(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert run(["simulate", "--model", BROWNIAN, "--out", str(first), "--paths", "2000", "--seed", "5"]) == 0
    assert run(["simulate", "--model", str(first / "config.json"), "--out", str(second)]) == 0
    assert (first / "estimate.json").read_bytes() == (second / "estimate.json").read_bytes()


def test_schema_error_exit_code(tmp_path, capsys):
    code = run(["check", "--model", TWO_STATE, "--out", str(tmp_path), "--set", "regime.states.0.delta=-1"])
    assert code == 2
    assert "regime/states/0/delta" in capsys.readouterr().err


def test_unknown_field_is_a_schema_error(tmp_path, capsys):
    code = run(["check", "--model", BROWNIAN, "--out", str(tmp_path), "--set", "auxiliary.levy.rho=1"])
    assert code == 2


def test_malformed_json_is_a_schema_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["check", "--model", str(bad), "--out", str(tmp_path)]) == 2


def test_assumption_exit_code(tmp_path, capsys):
    code = run(["solve-regime", "--model", TWO_STATE, "--out", str(tmp_path), "--set", "regime.beta=1"])
    assert code == 3
    assert "beta_gt_1" in capsys.readouterr().err


def test_drift_assumption_exit_code(tmp_path, capsys):
    code = run(["solve-single", "--model", BROWNIAN, "--out", str(tmp_path),
                "--set", 'auxiliary.levy={"family": "CramerLundbergExp", "c": 1.0, "lambda": 1.0, "mu": 1.0}',
                "--set", "auxiliary.delta=1.5"])
    assert code == 3
    assert "drift_exceeds_delta" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, capsys):
    code = run(["solve-regime", "--model", TWO_STATE, "--out", str(tmp_path), "--set", "run.max_iter=2"])
    assert code == 4
    assert "trace" in capsys.readouterr().err


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BAILOUT_OUT_DIR", str(tmp_path / "env_out"))
    assert run(["check", "--model", BROWNIAN]) == 0
    assert (tmp_path / "env_out" / "check.json").exists()


def test_overrides():
    doc = config.apply_overrides({"a": {"b": [1, 2]}}, ["a.b.1=5", "a.c=\"x\"", "a.d=word"])
    assert doc == {"a": {"b": [1, 5], "c": "x", "d": "word"}}
    with pytest.raises(config.SchemaError):
        config.apply_overrides({}, ["novalue"])


def test_state_lookup_by_name_and_index():
    assert config.state_index(("cl1", "cl2"), "cl2") == 1
    assert config.state_index(("cl1", "cl2"), 0) == 0
    with pytest.raises(config.SchemaError):
        config.state_index(("cl1", "cl2"), "cl3")


def test_console_script(tmp_path):
    exe = shutil.which("bailout")
    if exe is None:
        pytest.skip("console script not installed")
    res = subprocess.run([exe, "check", "--model", TWO_STATE, "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
