import csv
import json

import numpy as np
import pytest

from swingpinn.cli import main

TINY = {
    "preset": "1bus",
    "dataset": {"n_traj": 4, "n_steps": 21, "n_collocation": 50, "holdout_traj": 2},
    "train": {"iterations": 10},
    "ensemble": {"master_seed": 3},
}


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return path


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_generate_default_size(tmp_path):
    out = tmp_path / "data.csv"
    assert main(["generate", "--preset", "1bus", "--seed", "7", "--out", str(out)]) == 0
    data = rows(out)
    assert data[0] == ["traj", "t", "P", "delta_1"] and len(data) == 20_101
    echo = json.loads((tmp_path / "data.csv.config.json").read_text())
    assert echo["dataset"]["seed"] == 7 and echo["preset"] == "1bus"


def test_ensemble_report(tiny, tmp_path):
    out = tmp_path / "report.json"
    assert main(["ensemble", "--config", str(tiny), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["n"] == 6 and len(rep["estimates"]) == 6 and len(rep["members"]) == 6
    assert {"system", "n", "estimates", "mu", "sigma2", "sigma", "ci", "members"} <= set(rep)


def test_plot_density(tiny, tmp_path):
    report = tmp_path / "report.json"
    assert main(["ensemble", "--config", str(tiny), "--out", str(report)]) == 0
    out = tmp_path / "gauss.csv"
    assert main(["plot-data", "--report", str(report), "--out", str(out)]) == 0
    body = np.array(rows(out)[1:], dtype=float)
    assert body.shape == (401, 2)
    assert abs(np.trapezoid(body[:, 1], body[:, 0]) - 1) <= 1e-3


def test_train_evaluate_and_angle_plot(tiny, tmp_path):
    model = tmp_path / "m.json"
    assert main(["train", "--config", str(tiny), "--out", str(model)]) == 0
    hist = rows(tmp_path / "m.history.csv")
    assert hist[0] == ["step", "data", "physics", "total"] and len(hist) == 11
    metrics = tmp_path / "metrics.csv"
    assert main(["evaluate", "--config", str(tiny), "--model", str(model), "--out", str(metrics)]) == 0
    m = rows(metrics)
    assert m[0] == ["traj", "P", "gen", "mae", "relative_error"] and m[-1][0] == "mean"
    angles = tmp_path / "angles.csv"
    assert main(["plot-data", "--config", str(tiny), "--model", str(model),
                 "--trajectories", "2", "--out", str(angles)]) == 0
    assert len(rows(angles)) == 1 + 2 * 21


def test_train_from_csv(tiny, tmp_path):
    data = tmp_path / "d.csv"
    assert main(["generate", "--config", str(tiny), "--out", str(data)]) == 0
    model = tmp_path / "m.json"
    assert main(["train", "--config", str(tiny), "--data", str(data), "--out", str(model)]) == 0
    again = tmp_path / "m2.json"
    assert main(["train", "--config", str(tiny), "--out", str(again)]) == 0
    assert model.read_bytes() == again.read_bytes()


@pytest.mark.parametrize("command", [["generate"], ["train"], ["ensemble"]])
def test_idempotent(command, tiny, tmp_path):
    a, b = tmp_path / "a.out", tmp_path / "b.out"
    assert main(command + ["--config", str(tiny), "--out", str(a)]) == 0
    assert main(command + ["--config", str(tiny), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_echo_reproduces_run(tiny, tmp_path):
    first = tmp_path / "first.csv"
    assert main(["generate", "--config", str(tiny), "--seed", "11", "--out", str(first)]) == 0
    echo = tmp_path / "first.csv.config.json"
    second = tmp_path / "second.csv"
    assert main(["generate", "--config", str(echo), "--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    assert echo.read_bytes() == (tmp_path / "second.csv.config.json").read_bytes()


def test_flags_before_subcommand(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"n_traj": 2, "n_steps": 5}}))
    assert main(["--preset", "2bus", "--seed", "3", "generate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["generate", "--preset", "2bus", "--seed", "3", "--config", str(cfg), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert rows(a)[0] == ["traj", "t", "P", "delta_1", "delta_2"]


def test_default_output_directory(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"n_traj": 1, "n_steps": 3},
                               "output": {"dir": str(tmp_path / "runs")}}))
    assert main(["generate", "--config", str(cfg)]) == 0
    assert (tmp_path / "runs" / "data.csv").is_file()


class TestExitCodes:
    def test_usage_errors(self, tmp_path, capsys):
        assert main([]) == 2
        assert main(["bogus"]) == 2
        assert main(["generate", "--preset", "3bus"]) == 2
        assert main(["generate", "--config", str(tmp_path / "missing.json")]) == 2
        bad = tmp_path / "bad.json"
        bad.write_text('{"preset": "9bus"}')
        assert main(["generate", "--config", str(bad)]) == 2
        assert "preset" in capsys.readouterr().err
        bad.write_text('{"ensemble": {"n_members": 0}}')
        assert main(["ensemble", "--config", str(bad)]) == 2
        assert main(["evaluate", "--model", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) == 2
        assert main(["train", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "y")]) == 2

    def test_solver_failure(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"dataset": {"n_traj": 1, "n_steps": 11, "rtol": 1e-300,
                                               "atol": 1e-300}}))
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d.csv")]) == 1
        assert "trajectory 0" in capsys.readouterr().err

    def test_training_divergence(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"dataset": {"n_traj": 3, "n_steps": 11, "n_collocation": 20},
                                   "train": {"iterations": 300, "learning_rate": 1e4}}))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "m.json")]) == 1
        assert main(["ensemble", "--config", str(cfg), "--out", str(tmp_path / "r.json")]) == 1

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "plot-data" in capsys.readouterr().out


def test_module_entry_point():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "swingpinn", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "ensemble" in out.stdout
