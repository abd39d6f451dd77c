from __future__ import annotations

import csv
import subprocess
import sys

import pytest

from hdmix.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main

SMALL = "[mesh]\nnx = 3\nny = 3\n[time]\nT = 1\nN = 4\n"


def run(tmp_path, command, text=SMALL, *extra):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(text)
    out = tmp_path / "out"
    return main([command, "--config", str(cfg), "--out", str(out), *extra]), out


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_solve_writes_trajectories_and_manifest(tmp_path):
    code, out = run(tmp_path, "solve")
    assert code == EXIT_OK
    u = read_csv(out / "trajectory_u.csv")
    lam = read_csv(out / "trajectory_lambda.csv")
    assert u[0] == ["t", "node_id", "ux", "uy"] and lam[0] == ["t", "mult_id", "lambda"]
    assert len(u) == 1 + 5 * 16 and len(lam) == 1 + 5 * 3
    manifest = (out / "manifest.txt").read_text()
    for key in ("[constants]", "m_A = 2.0", "c0_hat", "violations = none", "[results]", "[material]"):
        assert key in manifest


def test_demo_contact(tmp_path):
    code, out = run(tmp_path, "demo-contact")
    assert code == EXIT_OK
    rows = read_csv(out / "friction_kkt.csv")
    assert rows[0][:3] == ["t", "bound_residual", "slip_residual"] and len(rows) == 6


def test_study_convergence(tmp_path, capsys):
    code, out = run(tmp_path, "study-convergence", SMALL + "[family]\nschedule = 1, 2, 4\n")
    assert code == EXIT_OK
    rows = read_csv(out / "convergence.csv")
    assert rows[0] == ["n", "t", "e_u", "e_lambda", "F_n", "F_n_m", "g_n"] and len(rows) == 7
    assert "slope e_u" in capsys.readouterr().out


def test_optimize(tmp_path):
    code, out = run(tmp_path, "optimize", SMALL + "[optimize]\nbudget = 12\n")
    assert code == EXIT_OK
    rows = read_csv(out / "optimization_trace.csv")
    assert rows[0][0] == "eval_id" and len(rows) == 13
    assert "best_cost" in (out / "manifest.txt").read_text()


def test_verify(tmp_path, capsys):
    code, out = run(tmp_path, "verify", SMALL + "[verify]\nsamples = 10\ninstances = 5\n")
    assert code == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
    assert len(read_csv(out / "verify.csv")) == len(lines) + 1


def test_config_errors_exit_2(tmp_path, capsys):
    code, _ = run(tmp_path, "solve", "[material]\nbeta = -1\n[time]\nN = 0\n")
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "line 2" in err and "line 4" in err
    assert main(["solve", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_bad_seed_and_threads(tmp_path, monkeypatch):
    assert run(tmp_path, "verify", SMALL, "--seed", str(2**64))[0] == EXIT_CONFIG
    monkeypatch.setenv("HDMIX_THREADS", "zero")
    assert run(tmp_path, "solve")[0] == EXIT_CONFIG


def test_seed_override_lands_in_manifest(tmp_path):
    code, out = run(tmp_path, "verify", SMALL + "[verify]\nsamples = 5\ninstances = 2\n", "--seed", "42")
    assert code == EXIT_OK
    assert "seed = 42" in (out / "manifest.txt").read_text()


def test_threads_give_identical_study(tmp_path, monkeypatch):
    text = SMALL + "[family]\nschedule = 1, 2\n"
    run(tmp_path, "study-convergence", text)
    serial = (tmp_path / "out" / "convergence.csv").read_text()
    monkeypatch.setenv("HDMIX_THREADS", "2")
    run(tmp_path, "study-convergence", text)
    assert (tmp_path / "out" / "convergence.csv").read_text() == serial


def test_solver_failure_exits_3(tmp_path, capsys):
    code, _ = run(tmp_path, "solve", SMALL + "[solver]\nmax_iter = 1\ntol = 1e-15\n")
    assert code == EXIT_SOLVER
    assert "hdmix.history" in capsys.readouterr().err


def test_runtime_validation_exits_2(tmp_path, capsys):
    code, _ = run(tmp_path, "solve", "[mesh]\nnx = 2\nny = 2\nleft = 2\n")
    assert code == EXIT_CONFIG
    assert "clamped" in capsys.readouterr().err


@pytest.mark.parametrize("args", [["--help"], []])
def test_module_entry_point(args):
    proc = subprocess.run([sys.executable, "-m", "hdmix.cli", *args], capture_output=True, text=True)
    if args:
        assert proc.returncode == 0 and "demo-contact" in proc.stdout
    else:
        assert proc.returncode == 2
