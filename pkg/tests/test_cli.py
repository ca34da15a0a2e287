import json
import subprocess
import sys

import numpy as np
import pytest

from specsim.cli import main
from specsim.report import Table, compare, read_table, write_table

from .conftest import CURRENT_SOURCE, DIVIDER, RC_DECAY


@pytest.fixture
def netlists(tmp_path):
    paths = {}
    for name, text in {"divider": DIVIDER, "isrc": CURRENT_SOURCE, "rc": RC_DECAY,
                       "floating": "param xi1 uniform\nV1 1 0 1\nC1 1 2 1n*(1+0.1*xi1)\n"}.items():
        p = tmp_path / f"{name}.cir"
        p.write_text(text)
        paths[name] = p
    return paths


def _run(*args):
    return main([str(a) for a in args])


def test_divider_st_run_writes_summary_and_coefficients(netlists, tmp_path, capsys):
    out = tmp_path / "st"
    assert _run("run", netlists["divider"], "--method", "st", "--order", 3, "--out", out) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["K"] == 4
    assert summary["method"] == "st"
    assert summary["analysis"] == "dc"
    for key in ("N_hat", "kappa_samp", "cond_V", "wall_time", "newton", "config"):
        assert key in summary
    assert summary["config"]["beta"] == 1e-2  # defaults are materialized
    table = read_table(out / summary["waveform_file"])
    assert table.K == 4
    assert "v(2)" in table.names
    assert "mean=" in capsys.readouterr().out


def test_mc_runs_are_bit_identical(netlists, tmp_path):
    for tag in ("a", "b"):
        assert _run("run", netlists["divider"], "--method", "mc", "--samples", 2000, "--seed", 5,
                    "--out", tmp_path / tag) == 0
    a = (tmp_path / "a" / "dc.csv").read_bytes()
    b = (tmp_path / "b" / "dc.csv").read_bytes()
    assert a == b


def test_missing_netlist_exits_2(tmp_path, capsys):
    missing = tmp_path / "nope.cir"
    assert _run("run", missing, "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    rec = json.loads(err.strip().splitlines()[-1])
    assert rec["error"] == "config"
    assert str(missing) in json.dumps(rec)


def test_bad_netlist_exits_2_with_location(tmp_path, capsys):
    p = tmp_path / "bad.cir"
    p.write_text("R1 1 0 1k\nQ1 1 0 2\n")
    assert _run("run", p, "--out", tmp_path / "o") == 2
    assert "line 2" in capsys.readouterr().err


def test_solver_failure_exits_3(netlists, tmp_path):
    out = tmp_path / "f"
    assert _run("run", netlists["floating"], "--out", out) == 3
    rec = json.loads((out / "error.json").read_text())
    assert rec["error"] == "solver"


def test_compare_self_is_zero(netlists, tmp_path, capsys):
    out = tmp_path / "st"
    _run("run", netlists["divider"], "--out", out)
    capsys.readouterr()
    assert _run("compare", out, out, "--tol", 0) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["max"] == 0.0 and rep["pass"]


def test_compare_mismatched_order_errors(netlists, tmp_path):
    _run("run", netlists["divider"], "--order", 2, "--out", tmp_path / "p2")
    _run("run", netlists["divider"], "--order", 3, "--out", tmp_path / "p3")
    assert _run("compare", tmp_path / "p2", tmp_path / "p3") == 2


def test_st_vs_sg_affine_agree(netlists, tmp_path, capsys):
    for m in ("st", "sg"):
        assert _run("run", netlists["isrc"], "--method", m, "--out", tmp_path / m) == 0
    capsys.readouterr()
    assert _run("compare", tmp_path / "st", tmp_path / "sg", "--tol", 1e-8) == 0
    assert json.loads(capsys.readouterr().out)["max"] < 1e-8


def test_compare_reports_failure_with_exit_1(netlists, tmp_path):
    _run("run", netlists["divider"], "--method", "st", "--out", tmp_path / "st")
    _run("run", netlists["divider"], "--method", "mc", "--samples", 200, "--out", tmp_path / "mc")
    assert _run("compare", tmp_path / "st", tmp_path / "mc", "--tol", 1e-8) == 1


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_table_round_trip(tmp_path, fmt):
    rng = np.random.default_rng(0)
    T, K, m = 5, 3, 2
    coeffs = rng.normal(size=(T, K, m)) * np.pi
    table = Table(np.linspace(0, 1e-3, T) / 3, ["v(1)", "i(V1)"], coeffs[:, 0],
                  np.sqrt(np.sum(coeffs[:, 1:] ** 2, axis=1)), coeffs)
    p = write_table(tmp_path / f"t.{fmt}", table, fmt)
    back = read_table(p)
    assert back.names == table.names
    assert np.array_equal(back.times, table.times)
    assert np.array_equal(back.mean, table.mean)
    assert np.array_equal(back.coeffs, table.coeffs)


def test_json_format_and_outputs(netlists, tmp_path):
    out = tmp_path / "j"
    assert _run("run", netlists["divider"], "--format", "json", "--output", "v(2)",
                "--out", out) == 0
    doc = json.loads((out / "dc.json").read_text())
    assert list(doc["outputs"]) == ["v(2)"]


def test_transient_run_with_plot(netlists, tmp_path):
    out = tmp_path / "tr"
    assert _run("run", netlists["rc"], "--order", 2, "--plot", "--out", out) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["analysis"] == "tran"
    pngs = [f for f in summary["files"] if f.endswith(".png")]
    assert pngs and all((out / f).stat().st_size > 0 for f in pngs)
    table = read_table(out / summary["waveform_file"])
    assert table.times[-1] == pytest.approx(5e-3)


def test_unknown_output_is_config_error(netlists, tmp_path):
    assert _run("run", netlists["divider"], "--output", "v(9)", "--out", tmp_path / "o") == 2


def test_console_script_entry_point(netlists, tmp_path):
    res = subprocess.run([sys.executable, "-m", "specsim.cli", "run", str(netlists["isrc"]),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "o" / "summary.json").exists()


def test_compare_interpolates_between_grids(tmp_path):
    t1 = np.linspace(0, 1, 11)
    t2 = np.linspace(0, 1, 21)
    a = Table(t1, ["v(1)"], t1[:, None], np.zeros((11, 1)), None)
    b = Table(t2, ["v(1)"], t2[:, None], np.zeros((21, 1)), None)
    write_table(tmp_path / "a.csv", a)
    write_table(tmp_path / "b.csv", b)
    rep = compare(tmp_path / "a.csv", tmp_path / "b.csv", 1e-12)
    assert rep["pass"] and rep["metric"] == "mean_std"
