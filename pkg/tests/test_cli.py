import json
import subprocess
import sys

import numpy as np
import pytest

from mixedav.cli import main
from mixedav.fundamental_diagram import FlowParams, rho_check, rho_hat
from mixedav.metrics import parse_keyvalue, read_time_space
from mixedav.scenario import GridSpec, ScenarioConfig, SquareWaveTrain, Uniform, save_config

TINY_HYPER = ["--set", "horizon=2", "--set", "minibatch=8", "--set", "epochs=2", "--set", "hidden=8"]


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.json"
    save_config(ScenarioConfig(grid=GridSpec(n_cells=40), initial=SquareWaveTrain(0.15, 0.85, 2),
                               n_obs=10, horizon=0.2, dt_ctrl=0.05), path)
    return str(path)


@pytest.fixture
def trained(tmp_path, tiny):
    out = tmp_path / "run"
    assert main(["train", "--config", tiny, "--out", str(out), "--iterations", "3", "--quiet",
                 "--sequential"] + TINY_HYPER) == 0
    return out


def test_simulate_no_control_matches_env(tmp_path, tiny):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", tiny, "--out", str(out)]) == 0
    m = parse_keyvalue((out / "metrics.txt").read_text())
    assert m["avg_speed"] == pytest.approx(0.5, abs=1e-9)
    comp, rho = read_time_space(out / "time_space.csv")
    assert rho.shape[1] == 40 and comp["t"][-1] == pytest.approx(0.2)


def test_simulate_stationary_plateaus(tmp_path):
    cfg = tmp_path / "u.json"
    save_config(ScenarioConfig(grid=GridSpec(n_cells=400), initial=Uniform(0.5), horizon=0.5), cfg)
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--speed", "0", "--stride", "50"]) == 0
    comp, rho = read_time_space(out / "time_space.csv")
    j = int(comp["y"][-1] / (1 / 400))
    p = FlowParams()
    assert rho[-1, j - 1] == pytest.approx(rho_hat(0.0, p), abs=0.02)
    assert rho[-1, j + 1] == pytest.approx(rho_check(0.0, p), abs=0.02)


def test_simulate_schedule(tmp_path, tiny):
    sched = tmp_path / "s.csv"
    sched.write_text("t,V\n0,1.0\n0.1,0.0\n")
    out = tmp_path / "sim"
    assert main(["simulate", "--config", tiny, "--out", str(out), "--schedule", str(sched)]) == 0
    comp, _ = read_time_space(out / "time_space.csv")
    assert comp["v_cmd"][1] == 1.0 and comp["v_cmd"][-1] == 0.0


def test_bad_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"horizon": 0, "y0": -1, "oops": 1}))
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "oops" in err


def test_zero_horizon_rejected(tmp_path):
    cfg = tmp_path / "z.json"
    cfg.write_text(json.dumps({"horizon": 0.0}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_train_outputs(trained):
    curve = (trained / "curve.csv").read_text().splitlines()
    assert curve[0].startswith("iteration,mean_return") and len(curve) == 4
    assert (trained / "checkpoint_0000.npz").exists() and (trained / "checkpoint.npz").exists()
    assert "iterations=3" in (trained / "summary.txt").read_text()


def test_train_zero_iterations(tmp_path, tiny):
    out = tmp_path / "z"
    assert main(["train", "--config", tiny, "--out", str(out), "--iterations", "0", "--quiet"]) == 0
    assert sorted(f.name for f in out.glob("*.npz")) == ["checkpoint_0000.npz"]


def test_train_refuses_overwrite(trained, tiny):
    args = ["train", "--config", tiny, "--out", str(trained), "--iterations", "1", "--quiet"]
    assert main(args) == 4
    assert main(args + ["--force"]) == 0


def test_train_bad_override(tmp_path, tiny):
    assert main(["train", "--config", tiny, "--out", str(tmp_path / "x"), "--set", "nope=1"]) == 2
    assert main(["train", "--config", tiny, "--out", str(tmp_path / "x"), "--set", "gamma=2"]) == 2


def test_sequential_reruns_are_byte_identical(tmp_path, tiny):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["train", "--config", tiny, "--out", str(out), "--iterations", "3", "--quiet",
                     "--sequential", "--seed", "5"] + TINY_HYPER) == 0
        assert main(["eval", "--config", tiny, "--out", str(out), "--checkpoint", str(out / "checkpoint.npz"),
                     "--mode", "both", "--episodes", "2", "--sequential", "--seed", "5"]) == 0
    for name in ("curve.csv", "summary.txt", "metrics_stochastic.txt", "metrics_deterministic.txt",
                 "eval_table.txt", "checkpoint.npz"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_eval_both_modes(trained, tiny):
    assert main(["eval", "--config", tiny, "--out", str(trained), "--checkpoint",
                 str(trained / "checkpoint.npz"), "--mode", "both"]) == 0
    table = (trained / "eval_table.txt").read_text()
    assert "stochastic" in table and "deterministic" in table and "command TV" in table
    det = parse_keyvalue((trained / "metrics_deterministic.txt").read_text())
    sto = parse_keyvalue((trained / "metrics_stochastic.txt").read_text())
    assert det["command_tv"] < sto["command_tv"]


def test_eval_missing_checkpoint(tmp_path, tiny, capsys):
    assert main(["eval", "--config", tiny, "--out", str(tmp_path), "--checkpoint", str(tmp_path / "no.npz")]) == 4
    assert "not found" in capsys.readouterr().err


def test_compare(trained, tiny, tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", tiny, "--out", str(out)]) == 0
    lines = (out / "compare.txt").read_text().splitlines()
    assert len(lines) == 3 and lines[2].startswith("No Control")
    ckpt = str(trained / "checkpoint.npz")
    assert main(["compare", "--config", tiny, "--out", str(out), "--checkpoints"] + [ckpt] * 4) == 0
    lines = (out / "compare.txt").read_text().splitlines()
    assert len(lines) == 2 + 5
    assert all(len(l.split()) >= 5 for l in lines[2:])
    assert lines[3].startswith("[0.2, 0.3, 0.5]")


def test_module_entry_point(tmp_path, tiny):
    proc = subprocess.run([sys.executable, "-m", "mixedav", "simulate", "--config", tiny,
                           "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m" / "metrics.txt").exists()
