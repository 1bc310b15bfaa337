"""CLI surface: the five subcommands, error JSON, and the full pipeline."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from upa.cli import main
from tests.test_harness import tiny_train_config


@pytest.fixture()
def config_file(tmp_path):
    cfg = tiny_train_config(epochs=1)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    return path


def test_train_eval_analyze_pipeline(tmp_path, config_file, capsys):
    out_dir = tmp_path / "run"
    assert main(["train", "--config", str(config_file), "--out", str(out_dir),
                 "--export-test-data"]) == 0
    assert (out_dir / "checkpoint.upak").exists()
    assert (out_dir / "metrics.jsonl").exists()
    assert list((out_dir / "test_data").glob("*.upcd"))

    maps_dir = tmp_path / "maps"
    preds = tmp_path / "predictions.json"
    metrics_out = tmp_path / "metrics.json"
    assert main(["eval", "--ckpt", str(out_dir / "checkpoint.upak"),
                 "--data", str(out_dir / "test_data"),
                 "--out", str(metrics_out), "--predictions", str(preds),
                 "--dump-maps", str(maps_dir), "--map-clouds", "1"]) == 0
    saved = json.loads(metrics_out.read_text())
    assert 0.0 <= saved["metrics"]["oa"] <= 1.0
    dumped = list(maps_dir.glob("*.uamp"))
    assert dumped

    report = tmp_path / "report.json"
    assert main(["analyze", "--maps", str(maps_dir), "--out", str(report)]) == 0
    entries = json.loads(report.read_text())["entries"]
    assert entries and all(np.isfinite(e["mjsd"]) for e in entries)
    assert (tmp_path / "report.json.txt").exists()

    capsys.readouterr()  # drop accumulated stdout


def test_eval_uses_sibling_config(tmp_path, config_file, capsys):
    out_dir = tmp_path / "run"
    main(["train", "--config", str(config_file), "--out", str(out_dir)])
    spec = {"dataset": tiny_train_config().dataset.to_dict(), "count": 4, "seed": 5}
    data = tmp_path / "data.json"
    data.write_text(json.dumps(spec))
    assert main(["eval", "--ckpt", str(out_dir / "checkpoint.upak"),
                 "--data", str(data)]) == 0
    capsys.readouterr()


def test_bench_command(tmp_path, capsys):
    out = tmp_path / "bench.json"
    assert main(["bench", "--variant", "local-upa", "--sizes", "64,128",
                 "--k", "8", "--heads", "2", "--repeats", "1",
                 "--out", str(out)]) == 0
    result = json.loads(out.read_text())
    assert result["variant"] == "local-upa" and len(result["rows"]) == 2
    capsys.readouterr()


def test_ablate_command(tmp_path, capsys):
    cfg = tiny_train_config(epochs=1, n_train=8, n_test=8)
    cfg.dataset.n_points = 48
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert main(["ablate", "--axis", "pooling", "--config", str(path),
                 "--out", str(tmp_path / "abl")]) == 0
    table = json.loads((tmp_path / "abl" / "ablation_pooling.json").read_text())
    assert [r["value"] for r in table["rows"]] == ["mean", "max", "attention"]
    capsys.readouterr()


def test_contract_error_writes_json_to_stderr_and_exits_nonzero(tmp_path):
    cfg = tiny_train_config()
    broken = cfg.to_dict()
    broken["lr"] = -1.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(broken))
    proc = subprocess.run(
        [sys.executable, "-m", "upa.cli", "train", "--config", str(path),
         "--out", str(tmp_path / "out")],
        capture_output=True, text=True)
    assert proc.returncode != 0
    err = json.loads(proc.stderr.strip().splitlines()[-1])
    assert err["error"] == "ConfigError"
    assert "lr" in err["message"] or "learning rate" in err["message"]


def test_missing_data_dir_error_is_json(tmp_path, config_file):
    out_dir = tmp_path / "run"
    main(["train", "--config", str(config_file), "--out", str(out_dir)])
    proc = subprocess.run(
        [sys.executable, "-m", "upa.cli", "eval",
         "--ckpt", str(out_dir / "checkpoint.upak"),
         "--data", str(tmp_path / "nothing")],
        capture_output=True, text=True)
    assert proc.returncode != 0
    err = json.loads(proc.stderr.strip().splitlines()[-1])
    assert err["error"] in ("ConfigError", "OSError")


def test_seed_env_var_overrides_config(tmp_path, config_file):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    env = {"UPA_SEED": "123"}
    import os
    full_env = dict(os.environ, **env)
    for out in (out_a, out_b):
        subprocess.run(
            [sys.executable, "-m", "upa.cli", "train", "--config",
             str(config_file), "--out", str(out)],
            capture_output=True, text=True, env=full_env, check=True)
    assert (out_a / "metrics.jsonl").read_text() == (out_b / "metrics.jsonl").read_text()
    base = tmp_path / "base"
    subprocess.run(
        [sys.executable, "-m", "upa.cli", "train", "--config",
         str(config_file), "--out", str(base)],
        capture_output=True, text=True, check=True)
    assert (base / "metrics.jsonl").read_text() != (out_a / "metrics.jsonl").read_text()
