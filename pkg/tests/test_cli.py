"""End-to-end tests of the command-line interface."""

import json
import os

import numpy as np
import pytest

from sce import cli

SMALL_CONFIG = """\
encoder.in_size = 8
encoder.widths = 4,8
projector.hidden_dim = 16
projector.out_dim = 8
run.batch_size = 8
run.queue_size = 16
run.epochs = 2
schedule.warmup_epochs = 1
data.classes = 3
data.per_class = 16
data.holdout = 12
run.output_dir = {out}
"""


def write_config(tmp_path, **overrides):
    entries = {}
    for line in SMALL_CONFIG.format(out=tmp_path / "out").splitlines():
        key, value = (part.strip() for part in line.split("=", 1))
        entries[key] = value
    entries.update({k: str(v) for k, v in overrides.items()})
    path = tmp_path / "run.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in entries.items()))
    return str(path)


class TestVerifyCommand:
    def test_exit_zero(self, capsys):
        assert cli.run_cli(["verify", "--trials", "20"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_f64_flag(self, capsys):
        assert cli.run_cli(["verify", "--trials", "10", "--f64"]) == 0
        assert "float64" in capsys.readouterr().out


class TestPretrainCommand:
    def test_small_run_produces_artifacts(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        assert cli.run_cli(["pretrain", "--config", cfg_path]) == 0
        out_dir = tmp_path / "out"
        assert (out_dir / "config.txt").exists()
        assert (out_dir / "checkpoint_epoch0001.ckpt").exists()
        lines = (out_dir / "metrics.jsonl").read_text().splitlines()
        # 48 images / batch 8 = 6 steps per epoch, 2 epochs
        assert len(lines) == 12
        records = [json.loads(line) for line in lines]
        assert [r["step"] for r in records] == list(range(1, 13))
        assert all(np.isfinite(r["loss"]) for r in records)

    def test_missing_dataset_path(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, **{"data.kind": "cifar10"})
        assert cli.run_cli(["pretrain", "--config", cfg_path]) != 0
        assert "data.path" in capsys.readouterr().err

    def test_nonexistent_dataset_file(self, tmp_path, capsys):
        missing = str(tmp_path / "nope.bin")
        cfg_path = write_config(tmp_path, **{"data.kind": "cifar10",
                                             "data.path": missing})
        assert cli.run_cli(["pretrain", "--config", cfg_path]) != 0
        assert "nope.bin" in capsys.readouterr().err

    def test_locked_output_dir(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        out_dir = tmp_path / "out"
        out_dir.mkdir()
        (out_dir / ".lock").touch()
        assert cli.run_cli(["pretrain", "--config", cfg_path]) == 1
        assert "lock" in capsys.readouterr().err

    def test_bad_config_line(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.cfg"
        cfg_path.write_text("run.not_a_key = 5\n")
        assert cli.run_cli(["pretrain", "--config", str(cfg_path)]) == 1
        assert "not_a_key" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli_run")
    cfg_path = write_config(tmp_path)
    assert cli.run_cli(["pretrain", "--config", cfg_path]) == 0
    return str(tmp_path / "out" / "checkpoint_epoch0001.ckpt")


class TestProbeAndSimdist:
    def test_probe(self, trained, capsys):
        assert cli.run_cli(["probe", "--checkpoint", trained]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert 0.0 <= payload["top1"] <= 1.0
        assert payload["step"] == 12

    def test_simdist(self, trained, tmp_path, capsys):
        out = str(tmp_path / "sim.json")
        assert cli.run_cli(["simdist", "--checkpoint", trained,
                            "--samples", "120", "--out", out]) == 0
        payload = json.loads(open(out).read())
        assert payload["n_samples"] == 120
        assert sum(payload["weak_counts"]) == 120

    def test_probe_missing_checkpoint(self, tmp_path, capsys):
        missing = str(tmp_path / "none.ckpt")
        assert cli.run_cli(["probe", "--checkpoint", missing]) == 1
        assert "none.ckpt" in capsys.readouterr().err


class TestSweepCommand:
    def test_lambda_grid(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, **{"run.epochs": 1,
                                             "schedule.warmup_epochs": 0})
        assert cli.run_cli(["sweep", "--config", cfg_path,
                            "--param", "lambda", "--values", "0,0.5,1"]) == 0
        results = tmp_path / "out" / "sweep_results.jsonl"
        rows = [json.loads(line)
                for line in results.read_text().splitlines()]
        assert len(rows) == 3
        assert [r["value"] for r in rows] == ["0", "0.5", "1"]
        assert all(r["param"] == "objective.lam" for r in rows)
        assert all(0.0 <= r["top1"] <= 1.0 for r in rows)
        for v in ("0", "0.5", "1"):
            assert (tmp_path / "out" / f"sweep_lambda_{v}"
                    / "metrics.jsonl").exists()

    def test_unknown_param(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, **{"run.epochs": 1})
        assert cli.run_cli(["sweep", "--config", cfg_path,
                            "--param", "bogus", "--values", "1,2"]) == 2


class TestArgumentErrors:
    def test_no_subcommand(self):
        assert cli.run_cli([]) != 0

    def test_unknown_subcommand(self):
        assert cli.run_cli(["frobnicate"]) != 0
