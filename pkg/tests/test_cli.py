"""End-to-end tests for the command-line entry point and run directories."""

import csv
import json
import math

import pytest
import yaml

import genetic_rehearsal.cli as cli_module
from genetic_rehearsal import __version__, load_dataset, make_blobs, save_dataset
from genetic_rehearsal._run import RunDirectory, default_run_id
from genetic_rehearsal.cli import DIVERSITY_FIELDS, RETENTION_FIELDS, build_parser, main

SMALL_BLOBS = {"kind": "blobs", "n_per_class": 40, "test_per_class": 20, "num_classes": 2}

FAST_CONFIG = {
    "run": {"seed": 7, "threads": 1},
    "data": SMALL_BLOBS,
    "model": {"hidden_dim": 8},
    "train": {"epochs": 15, "learning_rate": 0.01},
    "ga": {"population_size": 12, "threshold": 0.9, "max_generations": 40},
    "enrich": {"n_per_class": 20, "n_global": 40},
    "rehearse": {"epochs": 3},
    "train_on_synth": {"repeats": 2},
    "boundary": {"cloud_size": 300, "repeats": 1, "epochs": 2},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(FAST_CONFIG))
    return path


def _run(config_file, out, command, *extra, run_id="r"):
    return main([command, "-c", str(config_file), "--output-dir", str(out), "--run-id", run_id, *extra])


def _manifest(root):
    return json.loads((root / "manifest.json").read_text())


def _rows(path):
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


class TestCommands:
    def test_train_writes_checkpoint_and_manifest(self, config_file, tmp_path):
        assert _run(config_file, tmp_path / "out", "train") == 0
        root = tmp_path / "out" / "r"
        manifest = _manifest(root)
        assert manifest["status"] == "completed"
        assert manifest["command"] == "train"
        assert manifest["version"] == __version__
        assert manifest["seed"] == 7
        assert set(manifest["seeds"]) == {"init", "train"}
        assert {"artifacts/solver.nrlb", "metrics/train.csv"} <= set(manifest["artifacts"])
        assert manifest["config"]["model"]["hidden_dim"] == 8
        assert len(_rows(root / "metrics" / "train.csv")) == 15

    def test_generate_from_checkpoint(self, config_file, tmp_path):
        assert _run(config_file, tmp_path / "out", "train", run_id="t") == 0
        checkpoint = tmp_path / "out" / "t" / "artifacts" / "solver.nrlb"
        assert _run(config_file, tmp_path / "out", "generate", "--set", f"model.checkpoint={checkpoint}", run_id="g") == 0
        root = tmp_path / "out" / "g"
        synth = load_dataset(root / "artifacts" / "synthetic.dset")
        assert synth.dim == 2
        assert len(load_dataset(root / "artifacts" / "raw.dset")) == 2 * 12
        with (root / "metrics" / "diversity.csv").open() as fh:
            assert fh.readline().strip().split(",") == DIVERSITY_FIELDS
        assert not (root / "metrics" / "train.csv").exists()

    def test_rehearse_is_deterministic(self, config_file, tmp_path):
        extra = ["--set", "new_data.kind=blobs", "--set", "new_data.n_per_class=40", "--set", "new_data.num_classes=2"]
        for out in ("a", "b"):
            assert _run(config_file, tmp_path / out, "rehearse", *extra) == 0
        for name in ("retention.csv", "diversity.csv", "train.csv"):
            first = (tmp_path / "a" / "r" / "metrics" / name).read_bytes()
            assert first == (tmp_path / "b" / "r" / "metrics" / name).read_bytes()
        rows = _rows(tmp_path / "a" / "r" / "metrics" / "retention.csv")
        assert list(rows[0]) == RETENTION_FIELDS
        assert [row["epoch"] for row in rows] == ["1", "2", "3"]
        assert {row["scheme"] for row in rows} == {"interleaved"}

    def test_rehearse_none_skips_generation(self, config_file, tmp_path):
        extra = ["--set", "new_data.kind=blobs", "--set", "rehearse.scheme=none"]
        assert _run(config_file, tmp_path, "rehearse", *extra) == 0
        assert not (tmp_path / "r" / "artifacts" / "synthetic.dset").exists()
        assert "ga" not in _manifest(tmp_path / "r")["seeds"]

    def test_train_on_synth_curves(self, config_file, tmp_path):
        assert _run(config_file, tmp_path, "train-on-synth", "--set", "train_on_synth.include_real=true") == 0
        rows = _rows(tmp_path / "r" / "metrics" / "train_on_synth.csv")
        assert len(rows) == 2 * 2 * 15
        assert {row["source"] for row in rows} == {"synthetic", "real"}

    def test_agreement_row(self, config_file, tmp_path):
        assert _run(config_file, tmp_path, "agreement") == 0
        (row,) = _rows(tmp_path / "r" / "metrics" / "agreement.csv")
        assert 0.0 <= float(row["alpha_a"]) <= 100.0
        assert row["synth_b"] == "random"
        report = json.loads((tmp_path / "r" / "metrics" / "agreement.json").read_text())
        assert report["alpha_a"] == pytest.approx(float(row["alpha_a"]))
        assert report["alpha_b"] == pytest.approx(float(row["alpha_b"]))
        assert report["sizes"]["original"] == 2 * 40
        assert report["sizes"]["test"] == 2 * 20
        assert report["run_seed"] == 7
        assert {"init", "random", "train.1"} <= set(report["seeds"])
        assert "metrics/agreement.json" in _manifest(tmp_path / "r")["artifacts"]

    def test_boundary_keeps_ceil_fraction(self, config_file, tmp_path):
        assert _run(config_file, tmp_path, "boundary") == 0
        summary = _manifest(tmp_path / "r")["summary"]
        assert summary["boundary_size"] == math.ceil(round(0.05 * summary["cloud_size"], 9))
        assert len(load_dataset(tmp_path / "r" / "artifacts" / "boundary.dset")) == summary["boundary_size"]
        assert len(_rows(tmp_path / "r" / "metrics" / "boundary.csv")) == 2

    def test_boundary_training_uses_its_own_recipe(self, config_file, tmp_path, mocker):
        spy = mocker.spy(cli_module, "train")
        extra = ["--set", "boundary.batch_size=4", "--set", "boundary.learning_rate=5e-2"]
        assert _run(config_file, tmp_path, "boundary", *extra) == 0
        boundary_cfg = spy.call_args_list[-1].args[2]
        assert (boundary_cfg.epochs, boundary_cfg.batch_size, boundary_cfg.learning_rate) == (2, 4, 0.05)
        solver_cfg = spy.call_args_list[0].args[2]
        assert (solver_cfg.batch_size, solver_cfg.learning_rate) == (32, 0.01)

    def test_bench_report(self, config_file, tmp_path):
        assert _run(config_file, tmp_path, "bench", "--set", "bench.repeats=2") == 0
        report = json.loads((tmp_path / "r" / "metrics" / "bench.json").read_text())
        assert set(report["seconds"]) == {"genetic", "enrich_step1", "enrich_step2"}
        assert all(len(v) == 2 for v in report["seconds"].values())
        assert report["solver_checkpoint_bytes"] > report["solver_parameter_bytes"]


# ---------------------------------------------------------------------------
# Failures
# ---------------------------------------------------------------------------


class TestFailures:
    def test_invalid_scheme_exits_2(self, config_file, tmp_path):
        assert _run(config_file, tmp_path, "rehearse", "--set", "rehearse.scheme=replay") == 2
        assert not (tmp_path / "r").exists()

    def test_rehearse_without_new_task(self, config_file, tmp_path):
        assert _run(config_file, tmp_path, "rehearse") == 2

    def test_train_refuses_checkpoint(self, config_file, tmp_path):
        assert _run(config_file, tmp_path, "train", "--set", "model.checkpoint=solver.nrlb") == 2

    def test_missing_checkpoint_marks_run_failed(self, config_file, tmp_path):
        missing = tmp_path / "missing.nrlb"
        assert _run(config_file, tmp_path, "generate", "--set", f"model.checkpoint={missing}") == 2
        manifest = _manifest(tmp_path / "r")
        assert manifest["status"] == "failed"
        assert "ConfigError" in manifest["error"]

    def test_corrupt_dataset_exits_4(self, config_file, tmp_path):
        good = tmp_path / "good.dset"
        save_dataset(make_blobs(5, 2, rng=0), good)
        bad = tmp_path / "bad.dset"
        bad.write_bytes(b"not a dataset at all")
        extra = ["--set", "data.kind=dataset", "--set", f"data.train_path={bad}", "--set", f"data.test_path={good}"]
        assert _run(config_file, tmp_path, "train", *extra) == 4

    def test_unknown_config_key_exits_2(self, config_file, tmp_path):
        assert _run(config_file, tmp_path, "train", "--set", "train.epoch=3") == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc_info:
            main(["--version"])
        assert exc_info.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_command_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


# ---------------------------------------------------------------------------
# Run directory
# ---------------------------------------------------------------------------


class TestRunDirectory:
    def test_timed_accumulates(self, tmp_path, mocker):
        clock = mocker.patch("genetic_rehearsal._run.time")
        clock.perf_counter.side_effect = [1.0, 3.5, 10.0, 10.5]
        with RunDirectory(tmp_path, "x", command="train", config={}, seed=0) as run:
            with run.timed("train"):
                pass
            with run.timed("train"):
                pass
        assert run.timings == {"train": 3.0}
        assert _manifest(tmp_path / "x")["timings"] == {"train": 3.0}

    def test_failure_is_recorded_and_reraised(self, tmp_path):
        with pytest.raises(ValueError):
            with RunDirectory(tmp_path, None, command="bench", config={}, seed=3):
                raise ValueError("boom")
        manifest = _manifest(tmp_path / default_run_id("bench", 3))
        assert manifest["status"] == "failed"
        assert manifest["error"] == "ValueError: boom"

    def test_artifact_hashes_cover_outputs(self, tmp_path):
        with RunDirectory(tmp_path, 12, command="train", config={}, seed=0) as run:
            run.artifact("a.bin").write_bytes(b"abc")
            run.metric("m.csv").write_text("x\n")
        hashes = _manifest(tmp_path / "12")["artifacts"]
        assert hashes["artifacts/a.bin"] == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        assert set(hashes) == {"artifacts/a.bin", "metrics/m.csv"}
