"""A1-A11 at their stated thresholds; each test records a PASS/FAIL line."""
import filecmp
import subprocess
import sys

import pytest

from blowuplab import checks, cli
from conftest import ACCEPTANCE_LINES


def _run(result):
    line = result.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert result.passed, line


@pytest.mark.parametrize("name", sorted(checks.ALL, key=lambda k: int(k[1:])))
def test_criterion(name):
    _run(checks.ALL[name]())


def test_a11_verify_is_reproducible(tmp_path):
    # one run here (warm caches), one in a fresh interpreter
    a, b = tmp_path / "a", tmp_path / "b"
    code_a = cli.main(["--command", "verify", "--level", "quick", "--out", str(a)])
    r = subprocess.run([sys.executable, "-m", "blowuplab.cli", "--command", "verify",
                        "--level", "quick", "--out", str(b)], capture_output=True, text=True)
    same = [filecmp.cmp(a / f, b / f, shallow=False) for f in ("verify.csv", "verify_metrics.csv")]
    ok = code_a == 0 and r.returncode == 0 and all(same)
    checks_line = checks.CheckResult(
        "A11", ok, detail=f"exit codes {code_a}, {r.returncode}; verify.csv and "
                          f"verify_metrics.csv identical {same[0]}, {same[1]}")
    _run(checks_line)
