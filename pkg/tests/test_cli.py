import json
import os
import subprocess
import sys

import numpy as np
import pytest

from killingflow import cli
from killingflow.config import load_config, write_config


def small_config(tmp_path, name="grim_reaper", **run):
    cfg = load_config(name)
    cfg.domain["resolution"] = [17] * len(cfg.domain["lower"])
    cfg.run.update({"t_end": 0.05, **run})
    cfg.output["snapshot_every"] = 10
    path = tmp_path / f"{name}.toml"
    write_config(cfg, path)
    return path


# ---------------------------------------------------------------------------
# serialization


def test_emit_series_empty(tmp_path):
    p = cli.emit_series({}, tmp_path / "s.csv")
    assert p.read_bytes() == b"t,max_ut,max_W,min_W,energy,dissipation_residual\n"


def test_emit_snapshot_three_nodes(tmp_path):
    p = cli.emit_snapshot(np.zeros(3), tmp_path / "u.csv", [np.linspace(0, 1, 3)])
    assert p.read_text() == "x1,u\n0,0\n0.5,0\n1,0\n"


def test_emit_snapshot_grim_reaper_axis_row(tmp_path):
    x = np.linspace(-1, 1, 129)
    p = cli.emit_snapshot(-np.log(np.cos(x)), tmp_path / "g.csv", [x])
    lines = p.read_text().splitlines()
    assert lines[1 + 64] == "0,0"
    assert float(lines[1].split(",")[1]) == -np.log(np.cos(1.0))


def test_emit_snapshot_2d_row_major(tmp_path):
    ax = [np.array([0.0, 1.0]), np.array([0.0, 0.5, 1.0])]
    u = np.arange(6.0).reshape(2, 3)
    lines = cli.emit_snapshot(u, tmp_path / "u.csv", ax).read_text().splitlines()
    assert lines[0] == "x1,x2,u" and lines[2] == "0,0.5,1" and lines[4] == "1,0,3"


def test_seventeen_digits():
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert float(cli.fmt(np.pi)) == np.pi


def test_emit_reports_path_on_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        cli.emit_series({}, blocker / "s.csv")


# ---------------------------------------------------------------------------
# commands and exit codes


def test_flow_command(tmp_path):
    rep = cli.run("flow", small_config(tmp_path), out=tmp_path / "o")
    assert rep.exit_code == 0
    for f in rep.files:
        assert (tmp_path / "o" / f).stat().st_size > 0
    data = json.loads((tmp_path / "o" / "report.json").read_text())
    assert data["diagnostics"]["stop_reason"] == "reached_t_end"
    header = (tmp_path / "o" / "series.csv").read_text().splitlines()[0]
    assert header == "t,max_ut,max_W,min_W,energy,dissipation_residual"


def test_flow_steady_preset_has_monotone_energy(tmp_path):
    rep = cli.run("flow", "orthogonal_relax", out=tmp_path, resolution=17)
    assert rep.exit_code == 0 and rep.diagnostics["stop_reason"] == "steady"
    e = np.loadtxt(tmp_path / "series.csv", delimiter=",", skiprows=1)[:, 4]
    assert np.all(np.diff(e) <= 1e-12)


def test_soliton_command(tmp_path):
    rep = cli.run("soliton", "grim_reaper", out=tmp_path)
    assert rep.exit_code == 0
    assert rep.diagnostics["residual_pde"] <= 1e-9
    row = np.loadtxt(tmp_path / "speed.csv", delimiter=",", skiprows=1)
    assert abs(row[0] - 1.0) <= 1e-2
    assert rep.diagnostics["speed_bound_ok"]


def test_speed_command(tmp_path):
    rep = cli.run("speed", "grim_reaper", out=tmp_path)
    assert rep.exit_code == 0 and abs(rep.diagnostics["C"] - 1) < 1e-3


@pytest.mark.parametrize("name", ["grim_reaper", "helicoid", "orthogonal_relax", "exp_warp_1d"])
def test_verify_presets_pass(name, tmp_path):
    rep = cli.run("verify", name, out=tmp_path)
    assert rep.exit_code == 0, rep.message
    assert (tmp_path / "verify.csv").exists()


def test_exit_config_error(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('[domain]\nlower = [0.0]\nupper = [1.0]\nresolution = [65]\n'
                   '[problem]\nphi = "1.0"\n')
    rep = cli.run("flow", bad, out=tmp_path / "o")
    assert rep.exit_code == 1 and "phi_0 < 1" in rep.message


def test_exit_solver_failure(tmp_path):
    rep = cli.run("soliton", small_config(tmp_path, max_iter=1, tol=1e-16), out=tmp_path / "o")
    assert rep.exit_code == 2
    assert rep.diagnostics["residual_history"]


def test_exit_divergence(tmp_path):
    path = small_config(tmp_path, "orthogonal_relax", scheme="explicit", dt=0.5, t_end=500.0)
    assert cli.run("flow", path, out=tmp_path / "o").exit_code == 3


def test_exit_verify_failure(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "verify_checks", lambda sc: [("always", 1.0, 0.5)])
    rep = cli.run("verify", "grim_reaper", out=tmp_path)
    assert rep.exit_code == 4 and "always" in rep.message


def test_main_parses_overrides(tmp_path, capsys):
    code = cli.main(["speed", "--config", "grim_reaper", "--out", str(tmp_path),
                     "--resolution", "33"])
    assert code == 0
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["config"]["domain"]["resolution"] == [33]
    with pytest.raises(SystemExit):
        cli.main(["launch", "--config", "grim_reaper"])


def test_deterministic_outputs(tmp_path):
    path = small_config(tmp_path, "helicoid", t_end=0.05)
    for d in ("a", "b"):
        assert cli.run("flow", path, out=tmp_path / d).exit_code == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_log_env_and_module_entry(tmp_path):
    env = dict(os.environ, KILLINGFLOW_LOG="INFO")
    proc = subprocess.run([sys.executable, "-m", "killingflow", "flow", "--config",
                           str(small_config(tmp_path)), "--out", str(tmp_path / "o")],
                          env=env, capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert "flow finished" in proc.stderr
