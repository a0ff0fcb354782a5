import csv
import json
import subprocess
import sys

import pytest

from blowuplab import cli
from blowuplab.config import ConfigError, RunConfig, read_file, resolve
from blowuplab.params import params_from_epsilon


def _json(path):
    with open(path) as fh:
        return json.load(fh)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_params_run(tmp_path):
    out = tmp_path / "p"
    assert cli.main(["--command", "params", "--epsilon", "0.05", "--out", str(out)]) == 0
    d = _json(out / "params.json")
    p = params_from_epsilon(0.05)
    assert d["alpha"] == p.alpha
    assert d["kappa_psi2"] == p.kappa_psi2
    m = _json(out / "manifest.json")
    assert m["status"] == "ok"
    assert m["config"]["command"] == "params"
    assert "numpy" in m["versions"]


def test_params_from_alpha(tmp_path):
    out = tmp_path / "p"
    assert cli.main(["--command", "params", "--alpha", "0.3", "--out", str(out)]) == 0
    assert _json(out / "params.json")["epsilon"] == pytest.approx(1.0 / 3.0 - 0.3)


@pytest.mark.parametrize("argv", [
    ["--command", "params"],
    ["--command", "params", "--epsilon", "-1"],
    ["--command", "params", "--alpha", "0.3", "--epsilon", "0.03"],
    ["--command", "evolve1d", "--epsilon", "0.05", "--dt", "0.01"],
    ["--command", "profile1d", "--epsilon", "0"],
    ["--command", "nope", "--epsilon", "0.05"],
])
def test_config_errors_write_nothing(tmp_path, argv):
    out = tmp_path / "x"
    assert cli.main(argv + ["--out", str(out)]) == 2
    assert not out.exists()


def test_unknown_flag(tmp_path):
    assert cli.main(["--command", "params", "--epsilon", "0.05", "--bogus", "1",
                     "--out", str(tmp_path / "x")]) == 2


def test_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("command = params\nepsilon = 0.1\n[solver]\ntol = 1e-8\n")
    out = tmp_path / "p"
    assert cli.main(["--config", str(cfg), "--epsilon", "0.05", "--out", str(out)]) == 0
    m = _json(out / "manifest.json")
    assert m["config"]["epsilon"] == 0.05
    assert m["config"]["tol"] == 1e-8


def test_empty_file_uses_defaults(tmp_path):
    cfg = tmp_path / "empty.ini"
    cfg.write_text("")
    out = tmp_path / "p"
    assert cli.main(["--config", str(cfg), "--command", "params", "--epsilon", "0.05",
                     "--out", str(out)]) == 0
    got = _json(out / "manifest.json")["config"]
    ref = RunConfig(command="params", epsilon=0.05, out=str(out)).to_dict()
    assert got == ref


def test_unknown_file_key(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("command = params\nepsilon = 0.05\n[grid]\nsize = 3\n")
    with pytest.raises(ConfigError):
        read_file(cfg)
    out = tmp_path / "p"
    assert cli.main(["--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()


def test_resolve_collects_problems():
    with pytest.raises(ConfigError) as ei:
        resolve({}, {"command": "params", "tol": "-1", "steps": "zero"})
    probs = ei.value.problems
    assert any("tol" in s for s in probs)
    assert any("steps" in s for s in probs)
    assert any("alpha" in s for s in probs)


def test_section_flag_spelling(tmp_path):
    out = tmp_path / "p"
    assert cli.main(["--command", "params", "--epsilon", "0.05", "--solver.tol", "1e-6",
                     "--out", str(out)]) == 0
    assert _json(out / "manifest.json")["config"]["tol"] == 1e-6


def test_profile_run(tmp_path):
    out = tmp_path / "prof"
    assert cli.main(["--command", "profile1d", "--epsilon", "0.1", "--out", str(out)]) == 0
    rows = _rows(out / "profile.csv")
    assert rows[0] == ["x", "W", "V", "psi_ring"]
    s = _json(out / "summary.json")
    assert s["converged"]
    assert s["c_l"] > 0 > s["c_w"]


def test_nonconvergence_exit_1(tmp_path):
    out = tmp_path / "nc"
    assert cli.main(["--command", "profile1d", "--epsilon", "0.05", "--max_iter", "2",
                     "--out", str(out)]) == 1
    m = _json(out / "manifest.json")
    assert m["status"] == "not_converged"
    assert "residual" in m["failure_reason"]
    assert (out / "profile.csv").exists()


def test_evolve2d_physical_small(tmp_path):
    out = tmp_path / "e2"
    assert cli.main(["--command", "evolve2d", "--epsilon", "0.05", "--grid.nr", "32",
                     "--grid.nz", "32", "--steps", "3", "--out", str(out)]) == 0
    rows = _rows(out / "series.csv")
    assert rows[0] == ["t", "sup_q", "sup_Omega"]
    assert len(rows) == 5
    sup = [float(r[1]) for r in rows[1:]]
    assert max(sup) <= sup[0] * (1 + 1e-12)


def test_evolve2d_rescaled_small(tmp_path):
    out = tmp_path / "e3"
    assert cli.main(["--command", "evolve2d", "--mode", "rescaled", "--epsilon", "0.05",
                     "--grid.nr", "32", "--grid.nz", "32", "--grid.box", "100", "--steps", "2",
                     "--out", str(out)]) == 0
    assert "axis_drift" in _json(out / "summary.json")


def test_evolve1d_small(tmp_path):
    out = tmp_path / "e1"
    assert cli.main(["--command", "evolve1d", "--epsilon", "0.1", "--steps", "5",
                     "--out", str(out)]) == 0
    rows = _rows(out / "series.csv")
    assert len(rows) == 7
    assert _rows(out / "final.csv")[0] == ["x", "w0", "w"]


def test_streamfn_small(tmp_path):
    out = tmp_path / "s"
    assert cli.main(["--command", "streamfn", "--epsilon", "0.05", "--grid.nr", "32",
                     "--grid.nz", "32", "--out", str(out)]) == 0
    assert _rows(out / "stream.csv")[0] == ["r", "z", "psi", "u_r", "u_z"]
    assert len(_rows(out / "probes.csv")) == 21


def test_console_script(tmp_path):
    out = tmp_path / "p"
    r = subprocess.run([sys.executable, "-m", "blowuplab.cli", "--command", "params",
                        "--epsilon", "0.05", "--out", str(out)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (out / "params.json").exists()
