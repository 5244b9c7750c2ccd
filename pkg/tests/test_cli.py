import json
import os
import subprocess
import sys

import numpy as np
import pytest

from kotoc import cli
from kotoc.channel import haar_random
from kotoc.replica import save_gate


def run(*argv, env=None):
    full = dict(os.environ, **(env or {}))
    return subprocess.run([sys.executable, "-m", "kotoc.cli", *argv], capture_output=True, text=True, env=full)


def test_lattice_json(tmp_path, capsys):
    out = tmp_path / "l.json"
    assert cli.main(["lattice", "--k", "3", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["size"] == 5
    assert doc["config"]["k"] == 3
    assert len(doc["provenance"]["config_hash"]) == 16


def test_channel_from_file(tmp_path):
    p = tmp_path / "g.json"
    save_gate(haar_random(2, 2, seed=1), p)
    out = tmp_path / "c.json"
    assert cli.main(["channel", "--gate", f"file:{p}", "--validate", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["checks"]["ok"]


def test_bad_gate_file_exit_2(tmp_path):
    p = tmp_path / "bad.json"
    m = np.eye(4) * 1.1
    p.write_text(json.dumps({"d_a": 2, "d_c": 2, "matrix": [[[x, 0.0] for x in row] for row in m]}))
    r = run("channel", "--gate", f"file:{p}")
    assert r.returncode == 2
    assert "not unitary" in r.stderr


def test_unknown_library_gate_exit_2(capsys):
    assert cli.main(["channel", "--gate", "lib:nope"]) == 2


def test_otoc_round_trip_and_override(tmp_path):
    out = tmp_path / "o.csv"
    assert cli.main(["otoc", "--k", "2", "--t-max", "4", "--validate", "--out", str(out)]) == 0
    head, rows = cli.read_csv(out)
    assert head["config"]["k"] == 2 and len(rows) == 5
    assert float(rows[0]["multichain_re"]) == pytest.approx(float(rows[0]["transfer_re"]))
    again = tmp_path / "o2.csv"
    assert cli.main(["otoc", "--config", str(out), "--out", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()
    third = tmp_path / "o3.csv"
    assert cli.main(["otoc", "--config", str(out), "--k", "3", "--out", str(third)]) == 0
    head3, _ = cli.read_csv(third)
    assert head3["config"]["k"] == 3 and head3["config"]["t_max"] == 4


def test_config_for_other_command_rejected(tmp_path):
    out = tmp_path / "l.json"
    cli.main(["lattice", "--out", str(out)])
    assert cli.main(["otoc", "--config", str(out)]) == 2


def test_validation_failure_exit_1(tmp_path, monkeypatch):
    real = cli.series

    def skewed(method, *a, **kw):
        v = real(method, *a, **kw)
        return v * (1 + 1e-6) if method == "transfer" else v

    monkeypatch.setattr(cli, "series", skewed)
    assert cli.main(["otoc", "--t-max", "3", "--validate", "--out", str(tmp_path / "x.csv")]) == 1


def test_steady_validate_with_env_threads():
    r = run("steady", "--k", "3", "--validate", env={"OTOC_THREADS": "2"})
    assert r.returncode == 0, r.stderr
    doc = json.loads(r.stdout)
    assert doc["difference"] < 1e-12


def test_bad_thread_env_exit_2():
    r = run("otoc", "--t-max", "2", env={"OTOC_THREADS": "many"})
    assert r.returncode == 2


def test_threads_do_not_change_output(tmp_path):
    a = run("otoc", "--k", "3", "--t-max", "3", env={"OTOC_THREADS": "1"})
    b = run("otoc", "--k", "3", "--t-max", "3", env={"OTOC_THREADS": "3"})
    assert a.returncode == b.returncode == 0
    assert a.stdout == b.stdout


def test_montecarlo_method(tmp_path):
    out = tmp_path / "mc.csv"
    assert cli.main(["otoc", "--method", "montecarlo", "--t-max", "2", "--d-e", "2", "--samples", "4",
                     "--out", str(out)]) == 0
    _, rows = cli.read_csv(out)
    assert rows[0]["samples"] == "4"
    assert cli.main(["otoc", "--method", "montecarlo,transfer", "--t-max", "2"]) == 2


def test_scan(tmp_path):
    out = tmp_path / "s.csv"
    assert cli.main(["scan", "--d-e-list", "2,3", "--samples", "4", "--t", "1", "--out", str(out)]) == 0
    head, rows = cli.read_csv(out)
    assert [r["d_e"] for r in rows] == ["2", "3"]
    assert "variance_slope" in head["provenance"]


def test_export_mps(tmp_path):
    out = tmp_path / "im.npz"
    assert cli.main(["export-mps", "--k", "3", "--t", "2", "--d-c", "2", "--out", str(out)]) == 0
    with np.load(out) as z:
        assert z["A"].shape == (5, 5, 64)
    assert cli.main(["export-mps", "--k", "2"]) == 2


def test_recipe_fig3(tmp_path):
    out = tmp_path / "f3.csv"
    assert cli.main(["recipe", "fig3", "--t-max", "6", "--out", str(out)]) == 0
    head, rows = cli.read_csv(out)
    assert "lambda" in head["provenance"] and len(rows) == 7
    assert "k2_eps0.0001_re" in rows[0]


def test_input_errors_exit_2():
    assert cli.main(["otoc", "--k", "9"]) == 2
    assert cli.main(["otoc", "--method", "bogus"]) == 2
