import json
import subprocess
import sys

import numpy as np
import pytest

from randforce.cli import main


def run(args, capsys=None):
    code = main([str(a) for a in args])
    return code


def test_dim_below_four_is_rejected(tmp_path, capsys):
    assert run(["simulate", "--dim", 3, "--out", tmp_path / "o"]) == 1
    assert "d >= 4" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "randforce.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("field-stats", "simulate", "limit", "covariance", "compare", "verify"):
        assert sub in out.stdout


def test_simulate_writes_files_and_echo(tmp_path):
    out = tmp_path / "x"
    assert run(["simulate", "--t-max", 20, "--seed", 4, "--out", out]) == 0
    assert {p.name for p in out.iterdir()} == {"config.json", "trajectory.csv", "run.json"}
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["t_max"] == 20.0 and cfg["seed"] == 4 and "workers" not in cfg


def test_renewal_run_is_repeatable(tmp_path):
    args = ["simulate", "--model", "Y", "--R", 0.25, "--A", 50, "--m", 1e300, "--t-max", 30,
            "--seed", 2, "--h0", 0.05]
    run(args + ["--out", tmp_path / "a"])
    run(args + ["--out", tmp_path / "b"])
    for name in ("trajectory.csv", "renewal.csv", "run.json", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    head = (tmp_path / "a" / "renewal.csv").read_text().splitlines()[0]
    assert head.endswith("flags")


def test_config_file_rerun_and_override(tmp_path):
    run(["simulate", "--t-max", 15, "--seed", 9, "--out", tmp_path / "a"])
    cfg_path = tmp_path / "a" / "config.json"
    run(["simulate", "--config", cfg_path, "--out", tmp_path / "b"])
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()
    run(["simulate", "--config", cfg_path, "--seed", 10, "--out", tmp_path / "c"])
    assert json.loads((tmp_path / "c" / "config.json").read_text())["seed"] == 10
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() != (tmp_path / "c" / "trajectory.csv").read_bytes()


def test_unknown_config_key(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"speed": 3}))
    assert run(["simulate", "--config", bad, "--out", tmp_path / "o"]) == 1
    assert "speed" in capsys.readouterr().err


def test_output_env_routing(tmp_path, monkeypatch):
    monkeypatch.setenv("RANDFORCE_OUT", str(tmp_path))
    assert run(["limit", "--density", "--points", 11]) == 0
    assert (tmp_path / "limit" / "density.csv").exists()


def test_limit_exact_mean(tmp_path):
    assert run(["limit", "--exact", "--n", 200000, "--seed", 1, "--out", tmp_path]) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["mean_E32_over_2a2t"] == pytest.approx(4 / 3, rel=0.01)


def test_limit_density_tail(tmp_path):
    run(["limit", "--density", "--out", tmp_path])
    s = json.loads((tmp_path / "summary.json").read_text())
    assert 0 <= s["tail_at_x_max"] < 1e-12
    data = np.loadtxt(tmp_path / "density.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(data[:, 2]) >= 0)


@pytest.mark.parametrize("proc", ["E", "V"])
def test_limit_em_repeatable(tmp_path, proc):
    args = ["limit", "--em", "--process", proc, "--n", 20, "--t", 0.5, "--seed", 3]
    run(args + ["--out", tmp_path / "a"])
    run(args + ["--out", tmp_path / "b"])
    assert (tmp_path / "a" / "paths.csv").read_bytes() == (tmp_path / "b" / "paths.csv").read_bytes()


def test_covariance_check_radial(tmp_path):
    base = ["covariance", "--family", "radial", "--budget", 1000, "--out", tmp_path]
    assert run(base) == 0
    assert run(base + ["--check"]) == 2
    assert json.loads((tmp_path / "covariance.json").read_text())["csi_violated"] is True


def test_compare_refuses_radial(tmp_path, capsys):
    assert run(["compare", "--family", "radial", "--out", tmp_path]) == 1
    assert "csi_violated" in capsys.readouterr().err


def test_verify_radial_negative_control(tmp_path, capsys):
    assert run(["verify", "--suite", "covariance", "--family", "radial", "--budget", "small",
                "--check", "--out", tmp_path]) == 0
    assert "[PASS]" in capsys.readouterr().out


def test_verify_sde_small(tmp_path, capsys):
    assert run(["verify", "--suite", "sde", "--budget", "small", "--check", "--out", tmp_path]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5 and all(ln.startswith("[PASS]") for ln in lines)
    assert len(json.loads((tmp_path / "verify.json").read_text())["results"]) == 5


def test_verify_particle_small_reports_each_criterion(tmp_path, capsys):
    code = run(["verify", "--suite", "particle", "--budget", "small", "--check", "--out", tmp_path])
    lines = capsys.readouterr().out.strip().splitlines()
    assert [ln.split("criterion ")[1][0] for ln in lines] == ["7", "8", "9"]
    res = json.loads((tmp_path / "verify.json").read_text())["results"]
    assert code == (0 if all(r["passed"] for r in res) else 2)


def test_verify_family_flag_only_for_covariance(tmp_path):
    assert run(["verify", "--suite", "sde", "--family", "radial", "--out", tmp_path]) == 1
