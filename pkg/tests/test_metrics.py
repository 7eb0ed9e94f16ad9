"""Accuracy, ROC construction, and the trapezoid/Mann-Whitney AUC pair."""

import numpy as np
import pytest

from transitnet.errors import UsageError
from transitnet.metrics import accuracy, auc_from_pairs, roc_curve, write_roc_csv
from transitnet.tensor import Rng


class TestAccuracy:
    def test_all_correct(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8]])
        assert accuracy(probs, np.array([0, 1])) == 1.0

    def test_half_correct(self):
        probs = np.array([[0.6, 0.4], [0.3, 0.7]])
        assert accuracy(probs, np.array([1, 1])) == 0.5

    def test_tie_breaks_to_smaller_index(self):
        probs = np.array([[0.5, 0.5]])
        assert accuracy(probs, np.array([0])) == 1.0
        assert accuracy(probs, np.array([1])) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(UsageError):
            accuracy(np.zeros((0, 2)), np.zeros(0, dtype=int))


class TestRocCurve:
    def test_perfect_separation(self):
        curve = roc_curve([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
        assert curve.auc == 1.0

    def test_four_sample_case(self):
        scores = [0.1, 0.4, 0.35, 0.8]
        labels = [0, 0, 1, 1]
        assert roc_curve(scores, labels).auc == 0.75
        assert auc_from_pairs(scores, labels) == 0.75

    def test_permutation_baseline_near_half(self):
        rng = Rng(99)
        scores = rng.uniform(10_000)
        labels = (rng.uniform(10_000) < 0.5).astype(np.int64)
        auc = roc_curve(scores, labels).auc
        assert 0.45 <= auc <= 0.55

    def test_all_scores_equal_gives_half(self):
        assert auc_from_pairs([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5
        assert roc_curve([0.5] * 4, [0, 1, 0, 1]).auc == 0.5

    def test_reversed_perfect_ranking_is_zero(self):
        assert auc_from_pairs([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
        assert roc_curve([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]).auc == 0.0

    def test_single_class_undefined(self):
        with pytest.raises(UsageError, match="ROC undefined"):
            roc_curve([0.1, 0.9], [1, 1])

    def test_endpoints_and_monotonicity(self):
        rng = Rng(5)
        for _ in range(25):
            n = 4 + rng.randbelow(40)
            scores = rng.uniform(n)
            labels = (rng.uniform(n) < 0.5).astype(np.int64)
            if labels.min() == labels.max():
                continue
            curve = roc_curve(scores, labels)
            assert curve.points[0] == (np.inf, 0.0, 0.0)
            assert curve.points[-1][1] == 1.0 and curve.points[-1][2] == 1.0
            assert (np.diff(curve.fpr()) >= 0).all()
            assert (np.diff(curve.tpr()) >= 0).all()

    def test_trapezoid_equals_pairwise_on_random_instances(self):
        rng = Rng(2024)
        checked = 0
        while checked < 200:
            n = 4 + rng.randbelow(47)
            scores = rng.uniform(n)
            if checked % 2 == 0:
                scores = np.round(scores, 1)  # force ties
            labels = (rng.uniform(n) < 0.5).astype(np.int64)
            if labels.min() == labels.max():
                continue
            assert abs(roc_curve(scores, labels).auc
                       - auc_from_pairs(scores, labels)) < 1e-12
            checked += 1

    def test_invariant_under_monotone_transform(self):
        rng = Rng(31)
        scores = rng.uniform(60)
        labels = (rng.uniform(60) < 0.4).astype(np.int64)
        base = roc_curve(scores, labels)
        warped = roc_curve(np.exp(3.0 * scores) + 2.0, labels)
        assert abs(base.auc - warped.auc) < 1e-12
        assert np.array_equal(base.fpr(), warped.fpr())
        assert np.array_equal(base.tpr(), warped.tpr())

    def test_label_flip_with_score_negation_preserves_auc(self):
        rng = Rng(44)
        scores = rng.uniform(80)
        labels = (rng.uniform(80) < 0.5).astype(np.int64)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        a = roc_curve(scores, labels).auc
        b = roc_curve(-scores, 1 - labels).auc
        assert abs(a - b) < 1e-12


class TestRocExport:
    def test_csv_format(self, tmp_path):
        curve = roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        path = tmp_path / "roc.csv"
        write_roc_csv(path, curve)
        lines = path.read_text().splitlines()
        assert lines[0] == "threshold,fpr,tpr"
        assert len(lines) == len(curve.points) + 1
        threshold, fpr, tpr = lines[1].split(",")
        assert float(threshold) == np.inf
        assert float(fpr) == 0.0 and float(tpr) == 0.0
        # full precision round trip
        for line, point in zip(lines[1:], curve.points):
            parts = [float(p) for p in line.split(",")]
            assert parts == [point[0], point[1], point[2]]
