from __future__ import annotations

import json
import math

import numpy as np
import pytest

from tddn.cli import main
from _synth import make_bundle

TINY_FLAGS = ["--window", "8", "--depth", "2", "--epochs", "2", "--batch", "16"]


def run(*argv: str) -> int:
    return main(list(argv))


@pytest.fixture(scope="module")
def trained(synth_data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained_run")
    code = run(
        "train", "--data", str(synth_data_dir), "--out", str(out),
        "--subset", "FD001", "--seed", "1", *TINY_FLAGS,
    )
    assert code == 0
    return out


class TestTrainCommand:
    def test_writes_manifest_checkpoint_and_log(self, trained):
        assert (trained / "manifest.json").is_file()
        assert (trained / "model.ckpt").is_file()
        log_lines = (trained / "training_log.csv").read_text().splitlines()
        assert log_lines[0] == "epoch,lr,train_loss,val_rmse"
        assert len(log_lines) == 3
        assert log_lines[1].startswith("1,0.0001,")

    def test_manifest_echoes_settings(self, trained, synth_data_dir):
        manifest = json.loads((trained / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["window"] == 8
        assert manifest["depth"] == 2
        assert manifest["conv_channels"] == [32, 64]
        assert manifest["seed"] == 1
        assert manifest["subset"] == "FD001"
        assert manifest["data"] == str(synth_data_dir)
        assert len(manifest["columns"]) == 15

    def test_missing_data_dir_exits_2_naming_path(self, tmp_path, capsys):
        missing = tmp_path / "nowhere"
        code = run("train", "--data", str(missing), "--out", str(tmp_path / "o"))
        assert code == 2
        assert str(missing) in capsys.readouterr().err

    def test_out_required(self, synth_data_dir, capsys):
        code = run("train", "--data", str(synth_data_dir))
        assert code == 2
        assert "--out" in capsys.readouterr().err

    def test_unknown_flag_is_usage_error(self, synth_data_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("train", "--data", str(synth_data_dir), "--nonsense")
        assert exc.value.code == 2

    def test_window_override_recorded(self, synth_data_dir, tmp_path):
        out = tmp_path / "w16"
        code = run(
            "train", "--data", str(synth_data_dir), "--out", str(out),
            "--window", "16", "--depth", "2", "--epochs", "1", "--batch", "16",
        )
        assert code == 0
        assert json.loads((out / "manifest.json").read_text())["window"] == 16

    def test_infeasible_window_depth_exits_2(self, synth_data_dir, tmp_path, capsys):
        code = run(
            "train", "--data", str(synth_data_dir), "--out", str(tmp_path / "o"),
            "--window", "4", "--depth", "3",
        )
        assert code == 2
        assert "pool stage" in capsys.readouterr().err


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, synth_data_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# tiny run\n"
            f"data = {synth_data_dir}\n"
            "window = 8\n"
            "depth = 2\n"
            "epochs = 1\n"
            "batch = 16\n"
        )
        out = tmp_path / "out"
        code = run("train", "--config", str(cfg), "--out", str(out), "--window", "16")
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["window"] == 16  # flag beats config
        assert manifest["depth"] == 2  # config beats default

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("windou = 8\n")
        code = run("train", "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert code == 2
        assert "windou" in capsys.readouterr().err

    def test_malformed_line(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("window 8\n")
        code = run("train", "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert code == 2
        assert "key=value" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        code = run("train", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path))
        assert code == 2


class TestEvaluateCommand:
    def test_writes_predictions_and_metrics(self, trained, synth_data_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        code = run(
            "evaluate", "--checkpoint", str(trained / "model.ckpt"),
            "--data", str(synth_data_dir), "--out", str(out),
        )
        assert code == 0
        lines = (out / "predictions.csv").read_text().splitlines()
        assert lines[0] == "engine_id,true_rul,pred_rul,d"
        assert len(lines) == 5  # four synthetic test engines
        # summary matches a direct recomputation from the per-engine rows
        diffs = [float(line.split(",")[3]) for line in lines[1:]]
        expected_rmse = math.sqrt(math.fsum(d * d for d in diffs) / len(diffs))
        metrics = (out / "metrics.csv").read_text().splitlines()
        assert metrics[0] == "rmse,nasa_score"
        reported_rmse = float(metrics[1].split(",")[0])
        assert reported_rmse == pytest.approx(expected_rmse, abs=1e-12)
        assert "rmse" in capsys.readouterr().out

    def test_subset_mismatch_exits_2(self, trained, synth_data_dir, tmp_path, capsys):
        code = run(
            "evaluate", "--checkpoint", str(trained / "model.ckpt"),
            "--data", str(synth_data_dir), "--out", str(tmp_path / "o"),
            "--subset", "FD002",
        )
        assert code == 2
        assert "FD001" in capsys.readouterr().err

    def test_corrupted_checkpoint_exits_1(self, trained, synth_data_dir, tmp_path, capsys):
        blob = bytearray((trained / "model.ckpt").read_bytes())
        blob[-3] ^= 0xFF
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(blob))
        code = run(
            "evaluate", "--checkpoint", str(bad),
            "--data", str(synth_data_dir), "--out", str(tmp_path / "o"),
        )
        assert code == 1
        assert "checksum" in capsys.readouterr().err

    def test_missing_checkpoint_exits_2(self, synth_data_dir, tmp_path):
        code = run(
            "evaluate", "--checkpoint", str(tmp_path / "none.ckpt"),
            "--data", str(synth_data_dir), "--out", str(tmp_path / "o"),
        )
        assert code == 2


class TestSweepCommand:
    def test_window_sweep_summary(self, synth_data_dir, tmp_path):
        out = tmp_path / "sweep"
        code = run(
            "sweep", "--data", str(synth_data_dir), "--out", str(out),
            "--dim", "window", "--values", "8,16", "--repeats", "1",
            "--depth", "2", "--epochs", "1", "--batch", "16",
        )
        assert code == 0
        runs = (out / "runs.csv").read_text().splitlines()
        assert runs[0] == "value,seed,rmse,nasa_score,seconds,best_epoch,n_epochs"
        assert len(runs) == 3
        summary = (out / "summary.csv").read_text().splitlines()
        assert summary[0] == "value,repeats,mean_rmse,mean_score,mean_seconds"
        assert len(summary) == 3
        # repeats=1: the per-run value equals the mean
        for run_line, summary_line in zip(runs[1:], summary[1:]):
            assert run_line.split(",")[2] == summary_line.split(",")[2]
        for value in (8, 16):
            run_dir = out / f"window_{value}_seed_0"
            assert (run_dir / "training_log.csv").is_file()
            assert (run_dir / "metrics.csv").is_file()
            assert not (run_dir / "model.ckpt").exists()

    def test_invalid_window_value_exits_2(self, synth_data_dir, tmp_path):
        code = run(
            "sweep", "--data", str(synth_data_dir), "--out", str(tmp_path / "o"),
            "--dim", "window", "--values", "3,16",
        )
        assert code == 2

    def test_invalid_depth_value_exits_2(self, synth_data_dir, tmp_path):
        code = run(
            "sweep", "--data", str(synth_data_dir), "--out", str(tmp_path / "o"),
            "--dim", "depth", "--values", "0",
        )
        assert code == 2

    def test_bad_values_list_is_usage_error(self, synth_data_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(
                "sweep", "--data", str(synth_data_dir), "--out", str(tmp_path / "o"),
                "--dim", "window", "--values", "8,abc",
            )
        assert exc.value.code == 2


class TestExportFeaturesCommand:
    def test_exports_three_csvs(self, trained, synth_data_dir, tmp_path):
        out = tmp_path / "features"
        code = run(
            "export-features", "--checkpoint", str(trained / "model.ckpt"),
            "--data", str(synth_data_dir), "--out", str(out),
            "--engine", "2", "--split", "test",
        )
        assert code == 0
        bundle = make_bundle()
        n = next(t.n_cycles for t in bundle.test if t.unit_id == 2)

        attention = (out / "attention.csv").read_text().splitlines()
        assert attention[0] == "cycle," + ",".join(f"weight_{i}" for i in range(1, 9))
        assert len(attention) == n + 1
        for line in attention[1:]:
            weights = [float(v) for v in line.split(",")[1:]]
            assert math.fsum(weights) == pytest.approx(1.0, abs=1e-9)

        abstract = (out / "abstract_features.csv").read_text().splitlines()
        assert abstract[0].startswith("cycle,row,feat_1")
        assert len(abstract) == n * 8 + 1

        temporal = (out / "temporal_features.csv").read_text().splitlines()
        assert temporal[0].startswith("cycle,step,ch_1")
        assert len(temporal) == n * 2 + 1  # window 8 pooled twice

    def test_absent_engine_exits_2(self, trained, synth_data_dir, tmp_path, capsys):
        code = run(
            "export-features", "--checkpoint", str(trained / "model.ckpt"),
            "--data", str(synth_data_dir), "--out", str(tmp_path / "o"),
            "--engine", "999",
        )
        assert code == 2
        assert "999" in capsys.readouterr().err

    def test_deterministic_bytes(self, trained, synth_data_dir, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = run(
                "export-features", "--checkpoint", str(trained / "model.ckpt"),
                "--data", str(synth_data_dir), "--out", str(out),
                "--engine", "1", "--split", "train",
            )
            assert code == 0
            outs.append(out)
        for file_name in ("attention.csv", "temporal_features.csv", "abstract_features.csv"):
            assert (outs[0] / file_name).read_bytes() == (outs[1] / file_name).read_bytes()


class TestVersionFlag:
    def test_version_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("--version")
        assert exc.value.code == 0
        assert "tddn" in capsys.readouterr().out
