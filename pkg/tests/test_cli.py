import json

import pytest
import yaml

from calipso.cli import main, parse_pairs
from calipso.config import load_run_config
from calipso.network import ConfigError


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.yaml"
    p.write_text(yaml.safe_dump({
        "data": {"train_size": 12, "test_size": 6},
        "network": {"channels": 16, "blocks": 2, "T": 4, "backbone_channels": [8, 8, 16, 16, 16]},
        "train": {"batch_size": 2, "warmup_steps": 1, "log_every": 0},
    }))
    return p


def test_generate_data_is_deterministic(tmp_path, small_cfg):
    assert run("generate-data", "--config", small_cfg, "--seed", 7, "--out", tmp_path / "a") == 0
    assert run("generate-data", "--config", small_cfg, "--seed", 7, "--out", tmp_path / "b") == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["artifacts"]["train.jsonl"] == mb["artifacts"]["train.jsonl"]
    assert ma["seed"] == 7 and ma["config"]["data"]["train_size"] == 12


def test_train_then_eval(tmp_path, small_cfg, monkeypatch):
    monkeypatch.setenv("CALIPSO_OUTPUT_ROOT", str(tmp_path))
    assert run("generate-data", "--config", small_cfg, "--out", "d", "--dump-anchors") == 0
    assert (tmp_path / "d" / "train.anchors.jsonl").exists()
    assert run("train", "--config", small_cfg, "--data", tmp_path / "d" / "train.jsonl", "--steps", 3, "--out", "r") == 0
    assert run("eval", "--config", small_cfg, "--checkpoint", tmp_path / "r" / "checkpoint.npz",
               "--data", tmp_path / "d" / "test.jsonl", "--out", "e") == 0
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert 0.0 <= metrics["mean_ap_role"] <= 1.0
    assert run("detect", "--checkpoint", tmp_path / "r" / "checkpoint.npz", "--data", tmp_path / "d" / "test.jsonl",
               "--out", "p") == 0
    assert run("eval", "--predictions", tmp_path / "p" / "predictions.jsonl", "--data", tmp_path / "d" / "test.jsonl",
               "--out", "e2") == 0
    assert json.loads((tmp_path / "e2" / "metrics.json").read_text())["mean_ap_role"] == metrics["mean_ap_role"]
    assert run("plot", "--input", tmp_path / "r" / "history.jsonl") == 0
    assert (tmp_path / "r" / "history.png").exists()
    assert json.loads((tmp_path / "r" / "manifest.json").read_text())["command"] == "train"


def test_benchmark_writes_records_and_plot(tmp_path, small_cfg):
    assert run("benchmark", "--config", small_cfg, "--pairs", "1,4", "--repeats", 2,
               "--set", "benchmark.warmup=1", "--out", tmp_path / "b") == 0
    recs = json.loads((tmp_path / "b" / "benchmark.json").read_text())
    assert [r["P"] for r in recs] == [1, 4]
    assert recs[0]["calipso_ops"] == recs[1]["calipso_ops"]
    assert (tmp_path / "b" / "benchmark.png").stat().st_size > 0


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        run("train", "--bogus")
    assert e.value.code == 2
    assert run("train", "--data", tmp_path / "missing.jsonl", "--out", tmp_path / "x") == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("calipso train: error:")
    assert run("generate-data", "--set", "network.depth=3", "--out", tmp_path / "y") == 2


def test_config_overrides():
    cfg = load_run_config(None, ["network.blocks=5", "train.lr=0.02", "seed=4"])
    assert (cfg.network.blocks, cfg.train.lr, cfg.seed) == (5, 0.02, 4)
    with pytest.raises(ConfigError):
        load_run_config(None, ["nosuch.key=1"])
    with pytest.raises(ConfigError):
        load_run_config(None, ["train.lr"])


def test_parse_pairs():
    assert parse_pairs("1..64") == (1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64)
    assert parse_pairs("2,5") == (2, 5)


def test_ablate_writes_rows_per_variant(tmp_path, small_cfg):
    assert run("generate-data", "--config", small_cfg, "--out", tmp_path / "d") == 0
    assert run("ablate", "--config", small_cfg, "--data-dir", tmp_path / "d", "--variants", "full,no-passive",
               "--set", "ablation.steps=2", "--set", "ablation.seeds=[0,1]", "--out", tmp_path / "a") == 0
    rows = json.loads((tmp_path / "a" / "ablation.json").read_text())
    assert [r["variant"] for r in rows] == ["full", "no-passive"]
    assert all(len(r["ap"]) == 2 for r in rows)
    assert len((tmp_path / "a" / "ablation_runs.jsonl").read_text().splitlines()) == 4
    assert run("ablate", "--data-dir", tmp_path / "d", "--variants", "nope", "--out", tmp_path / "b") == 2


def test_training_rerun_reproduces_artifacts(tmp_path, small_cfg):
    assert run("generate-data", "--config", small_cfg, "--out", tmp_path / "d") == 0
    hashes = []
    for name in ("a", "b"):
        assert run("train", "--config", small_cfg, "--data", tmp_path / "d" / "train.jsonl", "--steps", 3,
                   "--out", tmp_path / name) == 0
        hashes.append(json.loads((tmp_path / name / "manifest.json").read_text())["artifacts"])
    assert hashes[0] == hashes[1]
