import json
import os

import numpy as np
import pytest

from satrl.cli import main
from satrl.config import ConfigError, load_config, to_ini, with_task
from satrl.dynamics import FailureMode
from satrl.env import Align, TaskSpec
from satrl.nn import MlpActorCritic, checkpoint_save

SMALL = ["--set", "ppo.epochs=2", "--set", "ppo.steps_per_epoch=400", "--set", "ppo.batch_size=400",
         "--set", "ppo.update_passes=2", "--set", "episode.horizon=100"]


def test_defaults_and_task_horizon():
    cfg = load_config()
    assert cfg.hp.epochs == 10 and cfg.seeds == (0,) and cfg.episode.horizon == 500
    x = load_config(overrides=["task.failure=x"])
    assert x.task.align is Align.X and x.episode.horizon == 800
    assert isinstance(cfg.hp.batch_size, int) and isinstance(cfg.hp.lr, float)


def test_partial_satellite_section_is_rejected():
    with pytest.raises(ConfigError, match="satellite.inertia"):
        load_config(text="[satellite]\nrw_inertia = 1e-5\nmax_rw_torque = 0.004\n"
                         "saturation_rpm = 7000\n")


@pytest.mark.parametrize("text", ["[bogus]\na = 1\n", "[ppo]\nlearning_rate = 1\n",
                                  "[ppo]\nepochs = many\n", "[ppo]\ngamma = 2\n"])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        load_config(text=text)


def test_overrides_and_paper_scale():
    cfg = load_config(overrides=["ppo.lr=1e-3", "run.seeds=3", "run.base_seed=5"])
    assert cfg.hp.lr == 1e-3 and cfg.seeds == (5, 6, 7)
    big = load_config(paper_scale=True)
    assert big.hp.epochs == 40 and len(big.seeds) == 10 and big.eval.episodes == 10000
    with pytest.raises(ConfigError):
        load_config(overrides=["ppo.lr"])


def test_ini_round_trip():
    cfg = load_config(overrides=["task.failure=y", "task.align=x", "ppo.lr=0.00031",
                                 "episode.delays=false", "satellite.inertia=0.2,0.3,0.25",
                                 "satellite.rw_inertia=2e-5", "satellite.max_rw_torque=0.005",
                                 "satellite.saturation_rpm=6000"])
    back = load_config(text=to_ini(cfg))
    assert back.to_dict() == cfg.to_dict() and back.hash() == cfg.hash()


def test_with_task_refreshes_default_horizon():
    cfg = load_config()
    moved = with_task(cfg, TaskSpec(FailureMode.FAILED_Z, Align.Y))
    assert moved.episode.horizon == 800 and moved.reward.threshold == moved.task.threshold
    custom = load_config(overrides=["episode.horizon=300"])
    assert with_task(custom, TaskSpec(FailureMode.FAILED_Z, Align.Y)).episode.horizon == 300


def test_out_default_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("SATRL_OUT", str(tmp_path))
    assert load_config().out == str(tmp_path)


def test_train_eval_artifacts_and_rerun(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", *SMALL, "--out", str(a)]) == 0
    for name in ("manifest.json", "config.ini", "stats.csv", "best.ckpt", "train_summary.json"):
        assert (a / name).exists()
    assert len(os.listdir(a / "checkpoints")) == 2
    assert main(["train", "--manifest", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "stats.csv").read_bytes() == (b / "stats.csv").read_bytes()
    header = (a / "stats.csv").read_text().splitlines()[0]
    assert header.startswith("seed,epoch") and "time" not in header

    ev = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(a / "best.ckpt"), "--episodes", "4",
                 "--set", "eval.steps=30", "--traces", "2", "--out", str(ev)]) == 0
    first = (ev / "envelope.csv").read_text().splitlines()[0]
    assert "episodes=4" in first and "task=nominal" in first
    assert len(os.listdir(ev / "traces")) == 2
    summary = json.loads((ev / "summary.json").read_text())
    assert summary


def test_suite_list(capsys):
    assert main(["suite", "--list"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 10 and lines[0].startswith("nominal")


def test_loop_start_at_target(tmp_path, capsys):
    ck = tmp_path / "net.ckpt"
    checkpoint_save(MlpActorCritic(seed=0), str(ck))
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"start": {"quaternion": [1, 0, 0, 0]},
                                "exit": {"dwell_s": 5}, "time_limit_s": 20}))
    out = tmp_path / "loop"
    assert main(["loop", "--plan", str(plan), "--checkpoint", str(ck), "--out", str(out)]) == 0
    assert "verdict TargetReached after 5.0s" in capsys.readouterr().out
    assert (out / "trace.csv").exists()


def test_loop_bad_plan_is_config_error(tmp_path):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"start": {"axis": [0, 0, 1]}}))
    ck = tmp_path / "net.ckpt"
    checkpoint_save(MlpActorCritic(seed=0), str(ck))
    assert main(["loop", "--plan", str(plan), "--checkpoint", str(ck)]) == 2


def test_inspect(tmp_path, capsys):
    net = MlpActorCritic(seed=3)
    binp, jsonp = tmp_path / "n.ckpt", tmp_path / "n.json"
    checkpoint_save(net, str(binp), meta={"task": "x/y"})
    checkpoint_save(net, str(jsonp), meta={"task": "x/y"})
    assert main(["inspect", str(binp)]) == 0
    text_bin = capsys.readouterr().out
    assert "parameters: 10375" in text_bin and "task: x/y" in text_bin
    assert main(["inspect", str(jsonp)]) == 0
    text_json = capsys.readouterr().out
    hashes = [next(l for l in t.splitlines() if l.startswith("param hash")) for t in (text_bin, text_json)]
    assert hashes[0] == hashes[1] and net.param_hash() in hashes[0]

    blob = binp.read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(blob[: len(blob) // 2])
    assert main(["inspect", str(bad)]) == 4
    assert main(["inspect", str(tmp_path / "missing.ckpt")]) == 4


def test_missing_config_file_exit_code(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.ini")]) == 2


def test_stats_csv_values_are_finite(tmp_path):
    assert main(["train", *SMALL, "--set", "run.seeds=2", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "stats.csv").read_text().splitlines()[1:]
    assert len(rows) == 4 and {r.split(",")[0] for r in rows} == {"0", "1"}
    header = (tmp_path / "stats.csv").read_text().splitlines()[0].split(",")
    keep = [i for i, h in enumerate(header) if h not in ("seed", "epoch", "kl_gate_fired")]
    vals = np.array([[float(r.split(",")[i]) for i in keep] for r in rows])
    assert np.all(np.isfinite(vals))


def test_inline_comments_allowed():
    cfg = load_config(text="[episode]\nhorizon = 300   ; shorter\n[ppo]\nlr = 1e-3 # faster\n")
    assert cfg.episode.horizon == 300 and cfg.hp.lr == 1e-3
