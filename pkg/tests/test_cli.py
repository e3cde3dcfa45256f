import csv
import subprocess
import sys

import pytest

from qrhmm import config
from qrhmm.cli import run


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_solve_quadratic_writes_coefficients(tmp_path):
    assert run(["solve-quadratic", "--out", str(tmp_path)]) == 0
    A = _rows(tmp_path / "A.csv")
    B = _rows(tmp_path / "B.csv")
    assert A[0] == ["spx", "vixfut"] and len(A) == 3
    assert float(A[1][1]) == float(A[2][0])
    assert [float(x) for x in B[1]] == [0.0, 0.0]


def test_config_errors_exit_with_code_1(tmp_path, capsys):
    assert run(["backtest", "--paths", "0", "--out", str(tmp_path)]) == 1
    assert "config error" in capsys.readouterr().err
    assert run(["simulate", "--set", "model.alpha=0.3", "--out", str(tmp_path)]) == 1
    assert run(["simulate", "--set", "nosuch.key=1", "--out", str(tmp_path)]) == 1
    assert run(["price", "--kind", "Bond", "--out", str(tmp_path)]) == 1
    assert run(["backtest", "--strategy", "magic", "--paths", "2", "--out", str(tmp_path)]) == 1


def test_numerical_failure_exits_with_code_2(tmp_path, capsys):
    # the closed form needs a positive penalty, so every greedy row of this sweep fails
    args = ["backtest", "--paths", "2", "--horizon", "1", "--kappa-grid", "0", "--strategy", "greedy", "--out", str(tmp_path)]
    assert run(args) == 2
    assert "numerical failure" in capsys.readouterr().err
    assert run(["solve-quadratic", "--set", "portfolio.kappa=0", "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize("workers", ["1", "3"])
def test_simulate_is_byte_identical(tmp_path, workers):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["simulate", "--paths", "1100", "--horizon-days", "0.25", "--seed", "7"]
    assert run(base + ["--out", str(a)]) == 0
    assert run(base + ["--out", str(b), "--workers", workers]) == 0
    assert (a / "paths.csv").read_bytes() == (b / "paths.csv").read_bytes()


def test_seed_position_does_not_matter(tmp_path):
    assert run(["--seed", "5", "simulate", "--paths", "2", "--out", str(tmp_path / "a")]) == 0
    assert run(["simulate", "--paths", "2", "--seed", "5", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "paths.csv").read_bytes() == (tmp_path / "b" / "paths.csv").read_bytes()


def test_dump_config_round_trips(tmp_path):
    dumped = tmp_path / "cfg.ini"
    assert run(["--config", "example2", "--set", "portfolio.kappa=0.5", "--dump-config", str(dumped)]) == 0
    cfg = config.load(str(dumped))
    assert cfg.portfolio.kappa == 0.5
    assert cfg == config.load("example2", ["portfolio.kappa=0.5"])


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("QRHMM_OUTPUT", str(tmp_path))
    assert run(["kernel"]) == 0
    rows = _rows(tmp_path / "kernel.csv")
    assert rows[0] == ["i", "c", "gamma"] and len(rows) == 11


def test_solve_hjb_and_decide(tmp_path):
    assert run(["solve-hjb", "--horizon", "10", "--times", "0,5", "--out", str(tmp_path)]) == 0
    values = _rows(tmp_path / "value_grid.csv")
    assert values[0] == ["t", "q_spx", "q_vixfut", "v"] and len(values) == 1 + 2 * 31 * 31
    dec = _rows(tmp_path / "decisions.csv")
    assert dec[0] == ["t", "q_spx", "q_vixfut", "l_spx_b", "l_spx_a", "l_vixfut_b", "l_vixfut_a"]
    assert run(["decide", "--out", str(tmp_path)]) == 0
    assert len(_rows(tmp_path / "decisions.csv")) == 1 + 31 * 31
    assert run(["solve-hjb", "--horizon", "10", "--times", "11", "--out", str(tmp_path)]) == 1


def test_net_risk_solve(tmp_path):
    assert run(["--config", "example2", "solve-hjb", "--horizon", "5", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "value_grid.csv")
    assert rows[0] == ["t", "r", "v"] and len(rows) == 1 + 2001


def test_pricing_commands(tmp_path):
    small = ["--set", "mc.n_outer=200", "--set", "mc.n_inner=10", "--out", str(tmp_path)]
    assert run(["price", "--kind", "SpxCall", "--expiry-days", "10", "--strike", "3000"] + small) == 0
    assert float(_rows(tmp_path / "price.csv")[1][3]) > 0
    assert run(["delta", "--kind", "Underlying"] + small) == 0
    assert float(_rows(tmp_path / "delta.csv")[1][3]) == 1.0
    assert run(["hedge", "--kind", "Underlying", "--paths", "3", "--horizon-days", "2"] + small) == 0
    assert len(_rows(tmp_path / "hedge.csv")) == 4


@pytest.mark.parametrize("name,extra", [
    ("example1", ["--strategy", "grid,greedy,never"]),
    ("example2", ["--strategy", "greedy,never"]),
    ("example3", ["--strategy", "greedy,uni", "--set", "portfolio.horizon=20"]),
])
def test_bundled_configs_run_at_reduced_size(tmp_path, name, extra):
    args = ["--config", name, "backtest", "--paths", "20", "--horizon", "10", "--kappa-grid", "0.01,0.1",
            "--per-episode", "--svg", "--out", str(tmp_path)] + extra
    assert run(args) == 0
    rows = _rows(tmp_path / "frontier.csv")
    assert rows[0][:3] == ["kappa", "strategy", "mean"]
    n_strats = len(extra[1].split(","))
    assert len(rows) == 1 + 2 * n_strats
    assert (tmp_path / "frontier.svg").read_text().startswith("<svg")
    assert len(_rows(tmp_path / "episodes.csv")) == 1 + 2 * n_strats * 20


def test_backtest_is_byte_identical_across_workers(tmp_path):
    base = ["backtest", "--paths", "1100", "--horizon", "3", "--kappa-grid", "0.01", "--strategy", "greedy", "--per-episode"]
    assert run(base + ["--out", str(tmp_path / "a")]) == 0
    assert run(base + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    for name in ("frontier.csv", "episodes.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_online_strategy_from_cli(tmp_path):
    args = ["backtest", "--paths", "2", "--horizon", "20", "--kappa-grid", "0.01", "--strategy", "online",
            "--set", "backtest.update_period=10", "--set", "mc.n_outer=4", "--set", "mc.n_inner=4", "--out", str(tmp_path)]
    assert run(args) == 0
    assert len(_rows(tmp_path / "frontier.csv")) == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qrhmm.cli", "solve-quadratic", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and "A.csv" in proc.stdout
