import json
import os
import subprocess
import sys

import pytest

from holder_transformer.cli import emit_curves, main


def _run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_verify_exit_zero(tmp_path):
    assert _run(tmp_path, "verify", "--delta", "0.4", "--delta-star", "0.1", "--seed", "0") == 0
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["ok"] and not rep["failed"]
    assert rep["schema"] == 1
    assert rep["config"]["seed"] == 0


def test_missing_seed_is_usage_error(tmp_path):
    assert _run(tmp_path, "approx-error", "--eps", "0.7") == 1


def test_count_closed_form(tmp_path):
    assert _run(tmp_path, "count", "--d", "2", "--L", "2", "--M", "2") == 0
    rep = json.loads((tmp_path / "count.json").read_text())
    assert rep["results"]["closed_form"]["omega"] == 156


def test_unknown_command(tmp_path):
    assert main(["no-such-command"]) == 1


def test_emit_curves_deterministic():
    rows = [(1, 0.5, 0.4, 0.6), (2, 0.25, None, None)]
    a, b = emit_curves(rows), emit_curves(list(rows))
    assert a == b
    lines = a.splitlines()
    assert lines[0] == "x,y,ci_lo,ci_hi"
    assert lines[2] == "2.0,0.25,0.25,0.25"


def test_emit_curves_needs_two_points():
    with pytest.raises(ValueError):
        emit_curves([(1, 2)])


def test_module_entry_point(tmp_path):
    env = dict(os.environ, HOLDER_TF_OUT=str(tmp_path))
    p = subprocess.run([sys.executable, "-m", "holder_transformer", "count", "--M", "2"],
                       capture_output=True, text=True, env=env)
    assert p.returncode == 0, p.stderr
    assert (tmp_path / "count.json").exists()
