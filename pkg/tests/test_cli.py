import json
import os

import numpy as np
import pytest

from cogstates import cli
from cogstates.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One tiny synthetic dataset plus a trained checkpoint, shared by the tests."""
    root = tmp_path_factory.mktemp("cliwork")
    cfg = root / "cfg.ini"
    cfg.write_text(
        "[run]\nseed = 3\n"
        "[synth]\nn_subjects = 3\nsessions_per_subject = 2\n"
        "length_min = 290\nlength_max = 340\namplitude = 2.0\n"
        "[train]\nmax_epochs = 3\npatience = 2\nlr_patience = 1\nbatch_size = 16\n"
        "[noise]\nrepeats = 1\n"
        "[ebq]\nmin_segments = 2\n")
    data = root / "data"
    assert main(["synth", "--config", str(cfg), "--out", str(data)]) == 0
    run = root / "train"
    assert main(["train", "--config", str(cfg), "--data", str(data),
                 "--out", str(run)]) == 0
    return {"root": root, "cfg": cfg, "data": data, "train": run,
            "ckpt": run / "model.ckpt"}


class TestPipelineSmoke:
    def test_train_artifacts(self, workdir):
        run = workdir["train"]
        for name in ("model.ckpt", "train_report.json", "curves.csv",
                     "model_summary.json", "config.resolved.ini", "seed.txt",
                     "timing.json", "split.json"):
            assert (run / name).exists(), name
        assert not (run / "_INCOMPLETE").exists()

    def test_evaluate_writes_confusion(self, workdir):
        out = workdir["root"] / "eval"
        code = main(["evaluate", "--config", str(workdir["cfg"]),
                     "--data", str(workdir["data"]),
                     "--checkpoint", str(workdir["ckpt"]), "--out", str(out)])
        assert code == 0
        lines = (out / "confusion.csv").read_text().strip().splitlines()
        assert len(lines) == 7 and len(lines[1].split(",")) == 7  # 6x6 plus labels
        payload = json.loads((out / "metrics.json").read_text())
        assert 0.0 <= payload["accuracy"] <= 1.0
        outcomes = json.loads((out / "outcomes.json").read_text())
        assert outcomes["model_kind"] == "cnn"
        assert len(outcomes["outcomes"]) > 0

    def test_importance_command(self, workdir):
        out = workdir["root"] / "imp"
        code = main(["importance", "--config", str(workdir["cfg"]),
                     "--data", str(workdir["data"]),
                     "--checkpoint", str(workdir["ckpt"]), "--out", str(out)])
        assert code == 0
        payload = json.loads((out / "importance.json").read_text())
        assert len(payload["overall"]) == 17

    def test_behavior_command_two_models(self, workdir):
        eval_dir = workdir["root"] / "eval"  # created above
        out = workdir["root"] / "beh"
        code = main(["behavior", "--config", str(workdir["cfg"]),
                     "--data", str(workdir["data"]),
                     "--outcomes", str(eval_dir / "outcomes.json"),
                     "--outcomes-b", str(eval_dir / "outcomes.json"),
                     "--out", str(out)])
        assert code == 0
        table = json.loads((out / "ebq_table.json").read_text())
        assert len(table["sessions"]) == 6  # 3 subjects x 2 sessions
        assert all(1 <= s["ebq"] <= 4 for s in table["sessions"])
        comparisons = json.loads((out / "comparisons.json").read_text())
        assert any(c["name"] == "consistent_correct_vs_incorrect" for c in comparisons)
        behavior = json.loads((out / "behavior.json").read_text())
        assert "cross_model_correlation" in behavior

    def test_report_bundles_runs(self, workdir):
        out = workdir["root"] / "bundle"
        code = main(["report", "--out", str(out), "--runs", str(workdir["train"])])
        assert code == 0
        index = json.loads((out / "index.json").read_text())
        assert "train" in index["runs"]
        assert index["runs"]["train"]["incomplete"] is False
        copied = list((out / "csv").iterdir())
        assert any(p.name.endswith("curves.csv") for p in copied)


class TestErrorPaths:
    def test_missing_checkpoint_is_data_error(self, workdir, tmp_path):
        code = main(["evaluate", "--config", str(workdir["cfg"]),
                     "--data", str(workdir["data"]),
                     "--checkpoint", str(tmp_path / "ghost.ckpt"),
                     "--out", str(tmp_path / "out")])
        assert code == cli.EXIT_DATA

    def test_bad_override_is_config_error(self, workdir, tmp_path):
        code = main(["synth", "--config", str(workdir["cfg"]),
                     "--set", "nonsense", "--out", str(tmp_path / "x")])
        assert code == cli.EXIT_CONFIG

    def test_unknown_config_key_rejected(self, workdir, tmp_path):
        code = main(["synth", "--config", str(workdir["cfg"]),
                     "--set", "synth.gamma=1", "--out", str(tmp_path / "x")])
        assert code == cli.EXIT_CONFIG

    def test_write_once_run_dirs(self, workdir):
        code = main(["synth", "--config", str(workdir["cfg"]),
                     "--out", str(workdir["data"])])
        assert code == cli.EXIT_CONFIG

    def test_missing_dataset_is_data_error(self, workdir, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        code = main(["train", "--config", str(workdir["cfg"]),
                     "--data", str(empty), "--out", str(tmp_path / "out")])
        assert code == cli.EXIT_DATA

    def test_failed_run_keeps_incomplete_marker(self, workdir, tmp_path):
        out = tmp_path / "run"
        code = main(["importance", "--config", str(workdir["cfg"]),
                     "--data", str(workdir["data"]),
                     "--checkpoint", str(workdir["ckpt"]),
                     "--grouping", str(tmp_path / "missing.csv"),
                     "--out", str(out)])
        assert code == cli.EXIT_DATA
        assert not out.exists() or not (out / "importance.json").exists()


class TestDeterminism:
    def test_same_config_byte_identical_checkpoints(self, workdir):
        root = workdir["root"]
        outs = []
        for name in ("rep1", "rep2"):
            out = root / name
            assert main(["train", "--config", str(workdir["cfg"]),
                         "--data", str(workdir["data"]), "--out", str(out)]) == 0
            outs.append(out)
        a, b = outs
        assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()
        assert (a / "train_report.json").read_bytes() == (b / "train_report.json").read_bytes()
        assert (a / "curves.csv").read_bytes() == (b / "curves.csv").read_bytes()

    def test_flag_override_changes_resolved_config(self, workdir, tmp_path):
        out = tmp_path / "o"
        assert main(["synth", "--config", str(workdir["cfg"]),
                     "--set", "synth.amplitude=0.5", "--out", str(out)]) == 0
        resolved = (out / "config.resolved.ini").read_text()
        assert "amplitude = 0.5" in resolved

    def test_env_var_moves_output_root(self, workdir, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.ENV_OUT_ROOT, str(tmp_path))
        assert main(["synth", "--config", str(workdir["cfg"]), "--out", "envrun"]) == 0
        assert (tmp_path / "envrun" / "manifest.csv").exists()


class TestGridCli:
    def test_grid_train_writes_leaderboard(self, workdir, tmp_path):
        out = tmp_path / "grid"
        code = main(["train", "--config", str(workdir["cfg"]),
                     "--data", str(workdir["data"]),
                     "--set", "grid.learning_rate=1e-3,1e-4",
                     "--set", "train.max_epochs=2",
                     "--grid", "--out", str(out)])
        assert code == 0
        board = json.loads((out / "leaderboard.json").read_text())
        assert len(board) == 2
        assert (out / "model.ckpt").exists()

    def test_grid_flag_without_values_errors(self, workdir, tmp_path):
        code = main(["train", "--config", str(workdir["cfg"]),
                     "--data", str(workdir["data"]), "--grid",
                     "--out", str(tmp_path / "g")])
        assert code == cli.EXIT_CONFIG
