"""Manifest parsing, patch formats, resampling, fold plans, synthetic data."""

import numpy as np
import pytest

from transitnet.data import (
    SYNTH_SPECTRUM_GAP,
    Manifest,
    ManifestRow,
    kfold_split,
    load_manifest,
    load_patch,
    radial_power_profile,
    resample_patch,
    synth_generate,
    write_manifest,
    write_pgm,
    write_ppm,
    write_rawf32,
)
from transitnet.errors import DataError, FormatError, ParameterError, UsageError
from transitnet.graph import (
    DenseSpec,
    GraphBuilder,
    SoftmaxSpec,
    init_parameters,
)
from transitnet.optim import TrainConfig, evaluate, fit
from transitnet.tensor import Rng, Shape4, derive_seed


def make_manifest_files(tmp_path, rows):
    for row in rows:
        target = tmp_path / row.path
        target.parent.mkdir(parents=True, exist_ok=True)
        write_pgm(target, np.zeros((1, 2, 2)))
    path = tmp_path / "manifest.csv"
    write_manifest(path, rows)
    return path


class TestManifest:
    def test_two_classes(self, tmp_path):
        path = make_manifest_files(tmp_path, [
            ManifestRow("a.pgm", 0), ManifestRow("b.pgm", 1)])
        manifest = load_manifest(path)
        assert manifest.num_classes == 2
        assert len(manifest) == 2

    def test_noncontiguous_labels_rejected(self):
        with pytest.raises(DataError, match="contiguous"):
            Manifest([ManifestRow("a", 0), ManifestRow("b", 2)])

    def test_duplicate_path_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            Manifest([ManifestRow("a", 0), ManifestRow("a", 1)])

    def test_missing_file_rejected(self, tmp_path):
        path = tmp_path / "manifest.csv"
        write_manifest(path, [ManifestRow("ghost.pgm", 0), ManifestRow("g2.pgm", 1)])
        with pytest.raises(DataError, match="missing"):
            load_manifest(path)

    def test_histogram_totals_1229(self):
        rows = [ManifestRow(f"p{i:04d}", i % 2) for i in range(1229)]
        manifest = Manifest(rows)
        assert sum(manifest.label_counts.values()) == 1229

    def test_comments_and_groups(self, tmp_path):
        rows = [ManifestRow("a.pgm", 0, "pat1"), ManifestRow("b.pgm", 1, None)]
        path = make_manifest_files(tmp_path, rows)
        text = path.read_text()
        path.write_text("# a comment line\n" + text)
        manifest = load_manifest(path)
        assert manifest.rows[0].group == "pat1"
        assert manifest.rows[1].group is None

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("file,cls\na,0\n")
        with pytest.raises(DataError, match="header"):
            load_manifest(path)


class TestPatchFiles:
    def test_pgm_known_bytes(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
        x = load_patch(path)
        np.testing.assert_allclose(
            x.reshape(-1), [0.0, 1.0, 128 / 255.0, 64 / 255.0])

    def test_ppm_vs_rawf32_round_trip_quantization(self, tmp_path):
        rng = Rng(3)
        img = rng.uniform(3 * 6 * 5).reshape(1, 3, 6, 5)
        ppm = tmp_path / "t.ppm"
        raw = tmp_path / "t.rawf32"
        write_ppm(ppm, img)
        write_rawf32(raw, img)
        from_ppm = load_patch(ppm)
        from_raw = load_patch(raw)
        assert np.abs(from_ppm - from_raw).max() <= 1.0 / 255.0

    def test_rawf32_bitwise_round_trip(self, tmp_path):
        values = Rng(5).normal(2 * 4 * 3).astype(np.float32).astype(np.float64)
        img = values.reshape(1, 2, 4, 3)
        path = tmp_path / "t.rawf32"
        write_rawf32(path, img)
        assert np.array_equal(load_patch(path), img)

    def test_truncated_rawf32_names_byte_counts(self, tmp_path):
        path = tmp_path / "t.rawf32"
        write_rawf32(path, np.ones((1, 1, 4, 4)))
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(FormatError, match=r"expected 64 data bytes, got 56"):
            load_patch(path)

    def test_truncated_pgm_names_byte_counts(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
        with pytest.raises(FormatError, match=r"expected 16 data bytes, got 10"):
            load_patch(path)

    def test_unknown_magic_names_offset(self, tmp_path):
        path = tmp_path / "t.bin"
        path.write_bytes(b"JUNKJUNK")
        with pytest.raises(FormatError, match="byte 0"):
            load_patch(path)

    def test_grayscale_loads_single_channel(self, tmp_path):
        path = tmp_path / "t.pgm"
        write_pgm(path, np.full((1, 3, 3), 0.5))
        assert load_patch(path).shape == (1, 1, 3, 3)

    def test_target_resizes(self, tmp_path):
        path = tmp_path / "t.pgm"
        write_pgm(path, Rng(2).uniform(8 * 8).reshape(1, 8, 8))
        x = load_patch(path, target=Shape4(1, 1, 4, 4))
        assert x.shape == (1, 1, 4, 4)
        with pytest.raises(DataError, match="channels"):
            load_patch(path, target=Shape4(1, 3, 8, 8))


class TestResample:
    def test_center_crop_of_ramp(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        (out,) = resample_patch(x, 2, 2, "center-crop")
        assert np.array_equal(out.reshape(2, 2), [[5.0, 6.0], [9.0, 10.0]])

    def test_crop_larger_than_input_rejected(self):
        with pytest.raises(ParameterError, match="crop"):
            resample_patch(np.zeros((1, 1, 4, 4)), 5, 4, "center-crop")

    def test_tile_count_700x460(self):
        x = np.zeros((1, 1, 700, 460))
        tiles = resample_patch(x, 228, 228, "tile-grid")
        assert len(tiles) == 6

    def test_tiles_disjoint_and_in_bounds(self):
        x = np.arange(7 * 9, dtype=np.float64).reshape(1, 1, 7, 9)
        tiles = resample_patch(x, 3, 4, "tile-grid")
        assert len(tiles) == (7 // 3) * (9 // 4)
        seen = set()
        for tile in tiles:
            for value in tile.reshape(-1):
                assert value not in seen
                seen.add(value)

    def test_bilinear_factor_one_identity(self):
        x = Rng(1).uniform(5 * 6).reshape(1, 1, 5, 6)
        (out,) = resample_patch(x, 5, 6, "bilinear-resize")
        assert np.array_equal(out, x)

    def test_bilinear_midpoints(self):
        x = np.array([[0.0, 1.0]]).reshape(1, 1, 1, 2)
        (out,) = resample_patch(x, 1, 3, "bilinear-resize")
        np.testing.assert_allclose(out.reshape(-1), [0.0, 0.5, 1.0])

    def test_unknown_mode(self):
        with pytest.raises(ParameterError, match="mode"):
            resample_patch(np.zeros((1, 1, 4, 4)), 2, 2, "nearest")


class TestKFold:
    def test_1229_rows_5_folds(self):
        manifest = Manifest([ManifestRow(f"p{i}", i % 2) for i in range(1229)])
        plan = kfold_split(manifest, 5, seed=3)
        assert sorted(plan.fold_sizes(), reverse=True) == [246, 246, 246, 246, 245]

    def test_11800_rows_2_folds(self):
        manifest = Manifest([ManifestRow(f"p{i}", i % 2) for i in range(11800)])
        plan = kfold_split(manifest, 2, seed=3)
        assert plan.fold_sizes() == [5900, 5900]

    def test_union_reproduces_rows_exactly(self):
        manifest = Manifest([ManifestRow(f"p{i}", i % 3) for i in range(101)])
        plan = kfold_split(manifest, 4, seed=9)
        gathered = np.concatenate([plan.val_indices(i) for i in range(4)])
        assert sorted(gathered.tolist()) == list(range(101))

    def test_train_val_disjoint(self):
        manifest = Manifest([ManifestRow(f"p{i}", i % 2) for i in range(40)])
        plan = kfold_split(manifest, 5, seed=1)
        for fold in range(5):
            overlap = set(plan.val_indices(fold)) & set(plan.train_indices(fold))
            assert not overlap

    def test_grouped_never_straddles(self):
        rows = [ManifestRow(f"p{i}", i % 2, f"patient{i % 7}") for i in range(70)]
        plan = kfold_split(Manifest(rows), 3, seed=5, grouped=True)
        for pid in range(7):
            folds = {plan.assignment[i] for i in range(70) if i % 7 == pid}
            assert len(folds) == 1

    def test_k_exceeding_rows_rejected(self):
        manifest = Manifest([ManifestRow(f"p{i}", i % 2) for i in range(4)])
        with pytest.raises(UsageError):
            kfold_split(manifest, 5, seed=1)

    def test_seeded_determinism(self):
        manifest = Manifest([ManifestRow(f"p{i}", i % 2) for i in range(50)])
        a = kfold_split(manifest, 5, seed=13)
        b = kfold_split(manifest, 5, seed=13)
        assert np.array_equal(a.assignment, b.assignment)


class TestSynth:
    def test_deterministic(self):
        a, la = synth_generate(10, 32, seed=4)
        b, lb = synth_generate(10, 32, seed=4)
        assert np.array_equal(a, b) and np.array_equal(la, lb)

    def test_count_and_shape(self):
        patches, labels = synth_generate(20, 32, seed=1)
        assert patches.shape == (40, 1, 32, 32)
        assert labels.shape == (40,)
        assert (labels[:20] == 0).all() and (labels[20:] == 1).all()

    def test_values_in_unit_range(self):
        patches, _ = synth_generate(5, 32, seed=2)
        assert patches.min() >= 0.0 and patches.max() <= 1.0

    def test_minimum_size_enforced(self):
        with pytest.raises(ParameterError):
            synth_generate(5, 8, seed=1)

    def test_radial_spectra_separated(self):
        patches, labels = synth_generate(50, 32, seed=7)
        p0 = np.mean([radial_power_profile(patches[i, 0]) for i in range(50)], axis=0)
        p1 = np.mean([radial_power_profile(patches[50 + i, 0]) for i in range(50)], axis=0)
        assert np.abs(p0 - p1).mean() > SYNTH_SPECTRUM_GAP

    def test_small_dense_net_learns_95_percent_2fold(self):
        patches, labels = synth_generate(100, 32, seed=23)
        manifest = Manifest([ManifestRow(f"s{i}", int(l)) for i, l in enumerate(labels)])
        plan = kfold_split(manifest, 2, seed=5)
        accuracies = []
        for fold in range(2):
            tr = plan.train_indices(fold)
            va = plan.val_indices(fold)
            b = GraphBuilder(Shape4(1, 1, 32, 32))
            fl = b.add("flatten", "flatten")
            f1 = b.add("fc1", "dense", DenseSpec(1024, 64), (fl,))
            r1 = b.add("fc1.relu", "relu", None, (f1,))
            f2 = b.add("fc2", "dense", DenseSpec(64, 2), (r1,))
            b.add("loss", "softmax-ce", SoftmaxSpec(2), (f2,))
            g = b.build()
            store = init_parameters(g, Rng(derive_seed(3, fold)))
            cfg = TrainConfig(learning_rate=0.02, momentum=0.9, batch_size=10,
                              epochs=40, seed=fold)
            fit(g, store, (patches[tr], labels[tr]), (patches[va], labels[va]), cfg)
            _, acc, _ = evaluate(g, store, (patches[va], labels[va]))
            accuracies.append(acc)
        assert np.mean(accuracies) >= 0.95, accuracies
