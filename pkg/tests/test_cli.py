"""CLI exit codes, replay artifacts, and the config echo contract."""

import json
import xml.etree.ElementTree as ET

import numpy as np

from roundabout_marl.cli import main
from roundabout_marl.net import load_checkpoint


def test_no_subcommand_exits_one(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_flag_exits_one(capsys):
    assert main(["replay", "--bogus"]) == 1


def test_bad_config_exits_two(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"unknown_key": 1}')
    assert main(["replay", "-c", str(cfg), "-o", str(tmp_path / "out")]) == 2
    assert "unknown_key" in capsys.readouterr().err


def test_missing_stats_exits_three(tmp_path, capsys):
    assert main(["plot", "--stats", str(tmp_path / "nope.csv")]) == 3


def test_replay_writes_exact_row_and_frame_counts(tmp_path, capsys):
    out = tmp_path / "replay"
    code = main(["replay", "--steps", "100", "--scripted", "maintain", "-o", str(out)])
    assert code == 0
    rows = (out / "trace.csv").read_text().strip().splitlines()
    assert rows[0] == "step,sim_time,vehicles"
    assert len(rows) == 101  # header + one row per step
    frames = sorted((out / "frames").glob("*.pgm"))
    assert len(frames) == 300
    assert (out / "resolved_config.json").exists()


def test_replay_trace_is_deterministic(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["replay", "--steps", "120", "--scripted", "accelerate", "-o", str(out1)]) == 0
    assert main(["replay", "--steps", "120", "--scripted", "accelerate", "-o", str(out2)]) == 0
    assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()


def test_train_echo_reproduces_run(tmp_path):
    out1 = tmp_path / "run1"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "trainer": {"n_env": 1, "n_ag": 1, "total_episodes": 3, "seed": 9},
        "env": {"max_vehicles": 1, "episode_time_limit": 8.0},
    }))
    assert main(["train", "-c", str(cfg), "-o", str(out1)]) == 0
    echoed = out1 / "resolved_config.json"
    assert echoed.exists()
    out2 = tmp_path / "run2"
    assert main(["train", "-c", str(echoed), "-o", str(out2)]) == 0
    n1 = load_checkpoint(out1 / "checkpoint_final.bin")
    n2 = load_checkpoint(out2 / "checkpoint_final.bin")
    for k in n1.params:
        assert np.array_equal(n1.params[k], n2.params[k])
    assert (out1 / "stats.csv").read_bytes() == (out2 / "stats.csv").read_bytes()


def test_periodic_checkpoints(tmp_path):
    out = tmp_path / "run"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "trainer": {"n_env": 1, "n_ag": 1, "total_episodes": 4, "seed": 2,
                    "checkpoint_every": 2},
        "env": {"max_vehicles": 1, "episode_time_limit": 6.0},
    }))
    assert main(["train", "-c", str(cfg), "-o", str(out)]) == 0
    assert (out / "checkpoint_ep000002.bin").exists()
    assert (out / "checkpoint_ep000004.bin").exists()
    load_checkpoint(out / "checkpoint_ep000002.bin")  # parses cleanly


def test_validate_quick_budget(tmp_path, capsys):
    code = main(["validate", "--steps", "6000", "--seeds", "1", "-o", str(tmp_path / "val")])
    captured = capsys.readouterr().out
    assert code == 0, captured
    assert "PASS" in captured
    assert (tmp_path / "val" / "validation_seed0.csv").exists()


def test_plot_from_training_stats(tmp_path):
    out = tmp_path / "run"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "trainer": {"n_env": 1, "n_ag": 1, "total_episodes": 4, "seed": 3},
        "env": {"max_vehicles": 1, "episode_time_limit": 6.0},
    }))
    assert main(["train", "-c", str(cfg), "-o", str(out)]) == 0
    svg = tmp_path / "curves.svg"
    assert main(["plot", "--stats", str(out / "stats.csv"), "-o", str(svg)]) == 0
    root = ET.fromstring(svg.read_text())
    assert root.tag.endswith("svg")


def test_eval_sweep_requires_checkpoint(tmp_path, capsys):
    assert main(["eval-sweep", "-o", str(tmp_path / "s")]) == 2


def test_eval_sweep_with_checkpoint(tmp_path):
    from roundabout_marl.net import NetConfig, init_params, save_checkpoint

    ckpt = tmp_path / "net.bin"
    save_checkpoint(init_params(NetConfig(visual=False, numeric_dim=4,
                                          numeric_hidden=(4, 4), merge_features=4), 0), ckpt)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sweep": {"values": [0.5], "episodes_per_value": 2}}))
    out = tmp_path / "sweep"
    assert main(["eval-sweep", "-c", str(cfg), "--checkpoint", str(ckpt), "-o", str(out)]) == 0
    assert (out / "sweep.csv").exists()
    assert (out / "sweep.svg").exists()
