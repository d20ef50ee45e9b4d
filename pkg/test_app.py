import json
import logging

import pytest

import app


@pytest.fixture
def workspace(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"steps": 2, "batch_size": 4}))
    assert app.cli_dispatch(["gen-data", "--n", "30", "--seed", "0", "--out", str(tmp_path / "train.jsonl")]) == 0
    assert app.cli_dispatch(["gen-data", "--n", "10", "--seed", "1", "--out", str(tmp_path / "test.jsonl")]) == 0
    return tmp_path


def train_and_eval(ws, tag):
    ckpt, metrics = ws / f"model-{tag}.json", ws / f"metrics-{tag}.json"
    assert app.cli_dispatch(["train", "--config", str(ws / "config.json"), "--corpus", str(ws / "train.jsonl"),
                             "--out-checkpoint", str(ckpt), "--out-curve", str(ws / f"curve-{tag}.json")]) == 0
    assert app.cli_dispatch(["eval", "--checkpoint", str(ckpt), "--train-corpus", str(ws / "train.jsonl"),
                             "--test-corpus", str(ws / "test.jsonl"), "--out", str(metrics),
                             "--curve", str(ws / f"curve-{tag}.json")]) == 0
    return ckpt, metrics


def test_pipeline_is_reproducible(workspace):
    again = workspace / "again.jsonl"
    assert app.cli_dispatch(["gen-data", "--n", "30", "--seed", "0", "--out", str(again)]) == 0
    assert again.read_bytes() == (workspace / "train.jsonl").read_bytes()

    ckpt_a, metrics_a = train_and_eval(workspace, "a")
    ckpt_b, metrics_b = train_and_eval(workspace, "b")
    assert ckpt_a.read_bytes() == ckpt_b.read_bytes()
    assert metrics_a.read_bytes() == metrics_b.read_bytes()
    assert len(json.loads(metrics_a.read_text())["loss_curve"]) == 2


def test_retrieve_finds_the_query_itself(workspace, capsys):
    ckpt, _ = train_and_eval(workspace, "r")
    capsys.readouterr()
    assert app.cli_dispatch(["retrieve", "--checkpoint", str(ckpt), "--corpus", str(workspace / "train.jsonl"),
                             "--query-id", "s0-000003", "--k", "3",
                             "--save-index", str(workspace / "index.json")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert lines[0].split("\t")[0] == "s0-000003"
    assert (workspace / "index.json").exists()


def test_unknown_query_id(workspace):
    ckpt, _ = train_and_eval(workspace, "q")
    assert app.cli_dispatch(["retrieve", "--checkpoint", str(ckpt), "--corpus", str(workspace / "train.jsonl"),
                             "--query-id", "missing"]) == 1


def test_usage_errors_exit_with_one(tmp_path):
    assert app.cli_dispatch(["train", "--bogus"]) == 1
    assert app.cli_dispatch([]) == 1
    assert app.cli_dispatch(["gen-data", "--n", "1", "--out", str(tmp_path / "x.jsonl")]) == 1
    assert app.cli_dispatch(["train", "--corpus", str(tmp_path / "missing.jsonl"),
                             "--out-checkpoint", str(tmp_path / "m.json")]) == 1


def test_gradcheck_command(capsys):
    assert app.cli_dispatch(["gradcheck", "--target", "rank", "--points", "3"]) == 0
    out = capsys.readouterr().out
    assert "rank" in out
    assert "tilted by sum(x)" in out


def test_sweep_defaults_to_data_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("HYPERFUSE_HOME", str(tmp_path / "home"))
    config, grid = tmp_path / "config.json", tmp_path / "grid.json"
    config.write_text(json.dumps({"steps": 2, "batch_size": 4, "n_train": 20, "n_test": 6}))
    grid.write_text(json.dumps({"alpha": [0.0, 2.0]}))
    assert app.cli_dispatch(["sweep", "--config", str(config), "--grid", str(grid)]) == 0
    out_dir = tmp_path / "home" / "sweep"
    for name in ("sweep.json", "sweep.csv", "sweep.xlsx", "summary.txt"):
        assert (out_dir / name).exists()
    assert "2/2 cells succeeded" in capsys.readouterr().out


def test_train_reports_every_worker_state(workspace, caplog):
    caplog.set_level(logging.INFO, logger="hyperfuse")
    train_and_eval(workspace, "s")
    states = [r.getMessage() for r in caplog.records if r.name == "hyperfuse"]
    assert states[:3] == ["Loading corpus...", "Training...", "Writing outputs..."]
