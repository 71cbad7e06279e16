import csv
import json

import pytest

from brwre_lab.cli import run


def _run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = run([*argv, "--out", str(out)])
    return code, out


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_validate_boundary_env(tmp_path):
    code, out = _run(tmp_path, "validate", "--env", "boundary_pm1.json")
    assert code == 0
    rep = json.loads((out / "validate.json").read_text())
    assert rep["passed"] is True
    m = _manifest(out)
    assert set(m["files"]) == {"validate.json"}
    assert "threads" not in m["config"] and "env_sha256" in m["config"]


def test_validate_failure_exit_code(tmp_path):
    code, _ = _run(tmp_path, "validate", "--env", "deterministic_pm1.json")
    assert code == 2


def test_harmonic_csv(tmp_path):
    code, out = _run(tmp_path, "harmonic", "--env", "boundary_pm1.json", "--y", "0..10", "--tol", "1e-8")
    assert code == 0
    raw = (out / "harmonic.csv").read_bytes()
    assert b"\r\n" in raw
    rows = list(csv.DictReader(raw.decode().splitlines()))
    assert [r["y"] for r in rows] == [str(y) for y in range(11)]
    assert all(abs(float(r["U"]) - (int(r["y"]) + 1)) <= 1e-8 for r in rows)


def test_budget_and_validation_exit_codes(tmp_path, capsys):
    code, _ = _run(tmp_path, "harmonic", "--env", "two_down.json", "--y", "3", "--max-horizon", "50",
                   name="a")
    assert code == 4
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "HorizonExceeded"
    assert _run(tmp_path, "harmonic", "--env", "boundary_pm1.json", "--tol", "-1", name="b")[0] == 2
    assert _run(tmp_path, "harmonic", "--env", "no_such_env.json", name="c")[0] == 2
    assert _run(tmp_path, "frobnicate", name="d")[0] == 2


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tol": 1e-6, "colour": "red"}))
    assert _run(tmp_path, "harmonic", "--env", "boundary_pm1.json", "--config", str(cfg))[0] == 2
    cfg.write_text(json.dumps({"tol": 1e-6}))
    code, out = _run(tmp_path, "harmonic", "--env", "boundary_pm1.json", "--config", str(cfg), name="ok")
    assert code == 0 and _manifest(out)["config"]["tol"] == 1e-6


@pytest.mark.parametrize("argv", [
    ["brwre", "--env", "two_state_different_step.json", "--trials", "8", "--horizon", "12", "--betas", "0,2"],
    ["conditioned", "--env", "two_state_different_step.json", "--n", "10", "--beta", "1", "--trials", "200"],
    ["renewal", "--env", "boundary_pm1.json", "--x-max", "20"],
    ["criterion", "--env", "power_tail.json"],
])
def test_outputs_are_reproducible_and_thread_independent(tmp_path, argv):
    c1, o1 = _run(tmp_path, *argv, "--seed", "5", "--threads", "1", name="one")
    c2, o2 = _run(tmp_path, *argv, "--seed", "5", "--threads", "4", name="four")
    c3, o3 = _run(tmp_path, *argv, "--seed", "5", "--threads", "1", name="again")
    assert c1 == c2 == c3 == 0
    assert _manifest(o1)["files"] == _manifest(o2)["files"] == _manifest(o3)["files"]
    assert (o1 / "manifest.json").read_bytes() == (o2 / "manifest.json").read_bytes()


def test_seed_changes_simulation_output(tmp_path):
    argv = ["brwre", "--env", "boundary_pm1.json", "--trials", "4", "--horizon", "8"]
    _, a = _run(tmp_path, *argv, "--seed", "1", name="a")
    _, b = _run(tmp_path, *argv, "--seed", "2", name="b")
    assert _manifest(a)["files"]["brwre.csv"] != _manifest(b)["files"]["brwre.csv"]


def test_threads_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BRWRE_LAB_THREADS", "3")
    code, out = _run(tmp_path, "brwre", "--env", "boundary_pm1.json", "--trials", "3", "--horizon", "5")
    assert code == 0
    monkeypatch.setenv("BRWRE_LAB_THREADS", "zero")
    assert _run(tmp_path, "brwre", "--env", "boundary_pm1.json", name="bad")[0] == 2


def test_criterion_report(tmp_path):
    code, out = _run(tmp_path, "criterion", "--env", "power_tail.json")
    rep = json.loads((out / "criterion.json").read_text())
    assert code == 0
    assert rep["classification"] == "degenerate"
    assert rep["cases"] == {"i": True, "ii": False, "iii": False}


def test_spine_check(tmp_path):
    code, out = _run(tmp_path, "spine-check", "--env", "two_state_different_step.json", "--n", "10",
                     "--samples", "20000")
    assert code == 0
    assert json.loads((out / "spine.json").read_text())


def test_acceptance_subset(tmp_path):
    code, out = _run(tmp_path, "acceptance", "--only", "1..3")
    assert code == 0
    rows = list(csv.DictReader((out / "acceptance.csv").read_text().splitlines()))
    assert [r["passed"] for r in rows] == ["true"] * 3
