"""End-to-end CLI contracts: artifacts, determinism, exit codes."""

from pathlib import Path

import numpy as np
import pytest

from transitnet.cli import main
from transitnet.data import load_manifest, load_patch
from transitnet.experiment import load_checkpoint, parse_synth_spec
from transitnet.errors import ConfigError
from transitnet.graph import init_parameters
from transitnet.presets import build_preset
from transitnet.tensor import Rng, Shape4


def run_cli(*args):
    return main([str(a) for a in args])


def tree_files(root: Path):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def assert_trees_identical(a: Path, b: Path):
    files_a, files_b = tree_files(a), tree_files(b)
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


TRAIN_ARGS = ["--synth", "n=20,size=32", "--k", "2", "--epochs", "3",
              "--lr", "0.01", "--batch", "10", "--seed", "7"]


class TestSynthCommand:
    def test_exported_dataset_reloads(self, tmp_path):
        out = tmp_path / "data"
        assert run_cli("synth", "--n", 4, "--size", 32, "--seed", 3, "--out", out) == 0
        manifest = load_manifest(out / "manifest.csv")
        assert len(manifest) == 8
        assert manifest.num_classes == 2
        patch = load_patch(manifest.resolve(manifest.rows[0]))
        assert patch.shape == (1, 1, 32, 32)


class TestTrainCommand:
    def test_file_contract(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli("train", "--preset", "alexnet_mini", "--variant", "transition",
                       *TRAIN_ARGS, "--out", out) == 0
        for fold in (0, 1):
            history = (out / f"fold{fold}_history.csv").read_text().splitlines()
            assert history[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
            assert len(history) == 1 + 3  # header + one row per epoch
            roc = (out / f"fold{fold}_roc.csv").read_text().splitlines()
            assert roc[0] == "threshold,fpr,tpr"
            index = out / f"fold{fold}_checkpoint" / "index.txt"
            assert index.exists()
        summary = (out / "summary.csv").read_text().splitlines()
        assert summary[0] == "fold,accuracy,auc"
        assert len(summary) == 1 + 2 + 1  # header, two folds, mean row
        assert summary[-1].startswith("mean,")
        for figure in ("roc.png", "history.png"):
            blob = (out / figure).read_bytes()
            assert blob[:8] == b"\x89PNG\r\n\x1a\n"

    def test_no_writes_outside_output_directory(self, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        out = tmp_path / "run"
        assert run_cli("train", *TRAIN_ARGS, "--epochs", "1", "--out", out) == 0
        assert list(workdir.iterdir()) == []

    def test_byte_identical_reruns(self, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert run_cli("train", "--variant", "transition", *TRAIN_ARGS,
                           "--out", out) == 0
        assert_trees_identical(*outs)

    def test_checkpoint_reloads_into_matching_store(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli("train", *TRAIN_ARGS, "--epochs", "1", "--out", out) == 0
        g = build_preset("alexnet_mini", 2, Shape4(1, 1, 32, 32))
        store = init_parameters(g, Rng(0))
        load_checkpoint(out / "fold0_checkpoint", store)
        # float32 container: reloaded values are exactly their f32 cast
        w = store.slots["conv1.w"].value
        assert np.array_equal(w, w.astype(np.float32).astype(np.float64))

    def test_parallel_folds_match_serial(self, tmp_path):
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        args = ["train", "--synth", "n=10,size=32", "--k", "2", "--epochs", "1",
                "--lr", "0.01", "--seed", "3"]
        assert run_cli(*args, "--out", serial) == 0
        assert run_cli(*args, "--parallel", "2", "--out", parallel) == 0
        assert_trees_identical(serial, parallel)

    def test_manifest_training(self, tmp_path):
        data = tmp_path / "data"
        assert run_cli("synth", "--n", 6, "--size", 32, "--seed", 5, "--out", data) == 0
        out = tmp_path / "run"
        assert run_cli("train", "--data", data / "manifest.csv", "--k", "2",
                       "--epochs", "1", "--lr", "0.01", "--seed", "2",
                       "--out", out) == 0
        assert (out / "summary.csv").exists()


class TestCompareCommand:
    def test_variant_rows_and_artifacts(self, tmp_path):
        out = tmp_path / "cmp"
        assert run_cli("compare", "--preset", "alexnet_mini", "--synth", "n=10,size=32",
                       "--k", "2", "--epochs", "2", "--lr", "0.01", "--seed", "7",
                       "--out", out) == 0
        lines = (out / "compare.csv").read_text().splitlines()
        assert lines[0] == "variant,mean_accuracy,mean_auc"
        variants = [line.split(",")[0] for line in lines[1:]]
        assert variants == ["baseline", "transition", "dropout", "lrn", "transition_nogap"]
        for variant in variants:
            assert (out / variant / "summary.csv").exists()
        assert (out / "compare.png").exists()
        assert (out / "compare_roc.png").exists()


class TestDumpArch:
    def test_branch_rows_and_total(self, capsys):
        assert run_cli("dump-arch", "--preset", "alexnet_mini",
                       "--variant", "transition", "--input", "3x64x64") == 0
        table = capsys.readouterr().out
        for k in (3, 5, 7):
            assert f"trans.k{k}.conv" in table
        rows = [line.split() for line in table.splitlines()[2:]]
        per_node = sum(int(r[-1]) for r in rows[:-1])
        total = int(rows[-1][-1])
        assert per_node == total

    def test_dropout_total_matches_baseline(self, capsys):
        run_cli("dump-arch", "--preset", "zfnet_mini", "--variant", "baseline")
        base_total = capsys.readouterr().out.splitlines()[-1].split()[-1]
        run_cli("dump-arch", "--preset", "zfnet_mini", "--variant", "dropout")
        drop_total = capsys.readouterr().out.splitlines()[-1].split()[-1]
        assert base_total == drop_total

    def test_unknown_preset_exits_one(self, capsys):
        assert run_cli("dump-arch", "--preset", "resnet") == 1
        assert "unknown preset" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_corrupted_backward_detected(self, capsys):
        assert run_cli("gradcheck", "--corrupt", "conv2d") == 2
        out = capsys.readouterr().out
        assert "conv2d" in out and "FAIL" in out
        assert sum(1 for line in out.splitlines() if "max_rel" in line) >= 9


class TestConfigHandling:
    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# experiment defaults\nsynth=n=6,size=32\nk=2\nepochs=1\n"
                       "lr=0.01\nseed=9\n")
        out = tmp_path / "out"
        # flag --seed 4 must beat the config's seed=9
        assert run_cli("train", "--config", cfg, "--seed", "4", "--out", out) == 0
        rerun = tmp_path / "out2"
        assert run_cli("train", "--synth", "n=6,size=32", "--k", "2", "--epochs", "1",
                       "--lr", "0.01", "--seed", "4", "--out", rerun) == 0
        assert_trees_identical(out, rerun)

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("warp_speed=9\n")
        assert run_cli("train", "--config", cfg, "--out", tmp_path / "x") == 1
        assert "warp_speed" in capsys.readouterr().err

    def test_both_sources_rejected(self, tmp_path, capsys):
        assert run_cli("train", "--synth", "n=4,size=32", "--data", "m.csv",
                       "--out", tmp_path / "x") == 1
        assert "exactly one data source" in capsys.readouterr().err

    def test_missing_source_rejected(self, tmp_path):
        assert run_cli("train", "--out", tmp_path / "x") == 1

    def test_bad_flag_exits_one(self):
        assert run_cli("train", "--bogus-flag", "1") == 1

    def test_synth_spec_parser(self):
        assert parse_synth_spec("n=200,size=32") == {"n": 200, "size": 32}
        assert parse_synth_spec("size=48") == {"n": 100, "size": 48}
        with pytest.raises(ConfigError):
            parse_synth_spec("n=two")
        with pytest.raises(ConfigError):
            parse_synth_spec("m=3")
