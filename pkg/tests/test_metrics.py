import csv
import json

import numpy as np
import pytest

from divseg.core import LabelMask, save_mask
from divseg.errors import InvalidInputError, MaskIOError
from divseg.metrics import (
    ChallengeScore,
    ConfusionCounts,
    PerImageScore,
    all_class_metrics,
    challenge_score,
    confusion,
    evaluate_dataset,
    per_class_metrics,
)


def brute_force_counts(pred, gt, classes):
    """Independent double-loop tally."""
    out = {c: {"tp": 0, "fp": 0, "fn": 0, "tn": 0} for c in range(classes)}
    h, w = gt.shape
    for c in range(classes):
        for i in range(h):
            for j in range(w):
                p, g = pred[i, j] == c, gt[i, j] == c
                if p and g:
                    out[c]["tp"] += 1
                elif p and not g:
                    out[c]["fp"] += 1
                elif g and not p:
                    out[c]["fn"] += 1
                else:
                    out[c]["tn"] += 1
    return out


def brute_force_metrics(tally):
    tp, fp, fn = tally["tp"], tally["fp"], tally["fn"]
    if tp + fp + fn == 0:
        return {k: 1.0 for k in ("iou", "f1", "f2", "precision", "recall")}
    div = lambda n, d: n / d if d else 0.0
    return {
        "iou": div(tp, tp + fp + fn),
        "f1": div(2 * tp, 2 * tp + fp + fn),
        "f2": div(5 * tp, 5 * tp + 4 * fn + fp),
        "precision": div(tp, tp + fp),
        "recall": div(tp, tp + fn),
    }


def counts_from(tp=0, fp=0, fn=0, tn=0):
    return ConfusionCounts(np.array([[tn, fp], [fn, tp]]))


class TestConfusion:
    def test_perfect_prediction_has_no_errors(self):
        rng = np.random.default_rng(0)
        mask = LabelMask(rng.integers(0, 2, size=(8, 8)), classes=2)
        counts = confusion(mask, mask, 2)
        for c in range(2):
            assert counts.fp(c) == 0 and counts.fn(c) == 0

    def test_complement_prediction(self):
        rng = np.random.default_rng(1)
        gt_arr = rng.integers(0, 2, size=(8, 8))
        gt = LabelMask(gt_arr, classes=2)
        pred = LabelMask(1 - gt_arr, classes=2)
        counts = confusion(pred, gt, 2)
        assert counts.tp(1) == 0
        assert counts.fp(1) == int((gt_arr == 0).sum())
        assert counts.fn(1) == int((gt_arr == 1).sum())

    def test_matches_brute_force_tally(self):
        rng = np.random.default_rng(2)
        for classes in (2, 3):
            pred_arr = rng.integers(0, classes, size=(8, 8))
            gt_arr = rng.integers(0, classes, size=(8, 8))
            counts = confusion(
                LabelMask(pred_arr, classes=classes), LabelMask(gt_arr, classes=classes), classes
            )
            oracle = brute_force_counts(pred_arr, gt_arr, classes)
            for c in range(classes):
                assert counts.tp(c) == oracle[c]["tp"]
                assert counts.fp(c) == oracle[c]["fp"]
                assert counts.fn(c) == oracle[c]["fn"]
                assert counts.tn(c) == oracle[c]["tn"]

    def test_counts_are_consistent(self):
        rng = np.random.default_rng(3)
        pred = LabelMask(rng.integers(0, 3, size=(6, 6)), classes=3)
        gt = LabelMask(rng.integers(0, 3, size=(6, 6)), classes=3)
        counts = confusion(pred, gt, 3)
        for c in range(3):
            assert counts.tp(c) + counts.fp(c) + counts.fn(c) + counts.tn(c) == 36

    def test_shape_mismatch_rejected(self):
        a = LabelMask(np.zeros((2, 2), dtype=np.int64), classes=2)
        b = LabelMask(np.zeros((3, 3), dtype=np.int64), classes=2)
        with pytest.raises(InvalidInputError):
            confusion(a, b, 2)

    def test_class_range_violation_rejected(self):
        a = LabelMask(np.full((2, 2), 2, dtype=np.int64), classes=3)
        with pytest.raises(InvalidInputError):
            confusion(a, a, 2)


class TestPerClass:
    def test_tp1_fp1_fn1(self):
        m = per_class_metrics(counts_from(tp=1, fp=1, fn=1, tn=1), 1)
        assert m["iou"] == pytest.approx(1 / 3)
        assert m["f1"] == 0.5
        assert m["precision"] == 0.5
        assert m["recall"] == 0.5
        assert m["f2"] == 0.5

    def test_perfect_is_all_ones(self):
        m = per_class_metrics(counts_from(tp=5, tn=3), 1)
        assert all(v == 1.0 for v in m.values())

    def test_tp2_fp0_fn3(self):
        m = per_class_metrics(counts_from(tp=2, fn=3, tn=1), 1)
        assert m["recall"] == pytest.approx(0.4)
        assert m["precision"] == 1.0
        assert m["f2"] == pytest.approx(10 / 22)

    def test_absent_class_scores_one(self):
        m = per_class_metrics(counts_from(tn=9), 1)
        assert all(v == 1.0 for v in m.values())

    def test_spurious_prediction_of_absent_class(self):
        m = per_class_metrics(counts_from(fp=4, tn=5), 1)
        assert m["recall"] == 0.0
        assert m["precision"] == 0.0
        assert m["iou"] == 0.0

    def test_iou_never_exceeds_f1(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            counts = counts_from(*(int(x) for x in rng.integers(0, 20, size=4)))
            m = per_class_metrics(counts, 1)
            assert 0.0 <= m["iou"] <= m["f1"] <= 1.0


class TestAllClass:
    def test_micro_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            pred = LabelMask(rng.integers(0, 2, size=(8, 8)), classes=2)
            gt = LabelMask(rng.integers(0, 2, size=(8, 8)), classes=2)
            counts = confusion(pred, gt, 2)
            m = all_class_metrics(counts)
            accuracy = np.trace(counts.matrix) / counts.total
            assert m["precision"] == m["recall"] == m["f1"] == accuracy
            assert m["iou"] <= m["f1"]

    def test_perfect_is_all_ones(self):
        mask = LabelMask(np.eye(4, dtype=np.int64), classes=2)
        m = all_class_metrics(confusion(mask, mask, 2))
        assert all(v == 1.0 for v in m.values())


class TestChallengeScore:
    def test_all_perfect(self):
        images = [PerImageScore("a", 1.0, 1.0, 1.0, 1.0) for _ in range(3)]
        cs = challenge_score(images)
        assert cs == ChallengeScore(mean=1.0, sd=0.0)

    def test_equal_metrics_image(self):
        s = PerImageScore("x", 0.5, 0.5, 0.5, 0.5)
        assert s.score == 0.5

    def test_two_image_mean_and_sd(self):
        images = [
            PerImageScore("a", 0.8, 0.8, 0.8, 0.8),
            PerImageScore("b", 0.6, 0.6, 0.6, 0.6),
        ]
        cs = challenge_score(images)
        assert cs.mean == pytest.approx(0.7)
        assert cs.sd == pytest.approx(0.1)

    def test_empty_list_rejected(self):
        with pytest.raises(InvalidInputError):
            challenge_score([])


class TestEvaluateDataset:
    @staticmethod
    def _write_pair(tmp_path, name, pred_arr, gt_arr):
        (tmp_path / "pred").mkdir(exist_ok=True)
        (tmp_path / "gt").mkdir(exist_ok=True)
        save_mask(LabelMask(pred_arr, classes=2), tmp_path / "pred" / f"{name}.png")
        save_mask(LabelMask(gt_arr, classes=2), tmp_path / "gt" / f"{name}.png")

    def test_pools_confusion_and_scores_per_image(self, tmp_path):
        rng = np.random.default_rng(6)
        pooled = np.zeros((2, 2), dtype=np.int64)
        for i in range(4):
            pred = rng.integers(0, 2, size=(8, 8))
            gt = rng.integers(0, 2, size=(8, 8))
            self._write_pair(tmp_path, f"img{i}", pred, gt)
            pooled += confusion(LabelMask(pred, classes=2), LabelMask(gt, classes=2), 2).matrix
        report = evaluate_dataset(tmp_path / "pred", tmp_path / "gt", classes=2)
        expected = per_class_metrics(ConfusionCounts(pooled), 1)
        assert report.per_class[1] == expected
        assert len(report.per_image) == 4
        assert 0.0 <= report.challenge.mean <= 1.0

    def test_unmatched_stems_listed(self, tmp_path):
        self._write_pair(tmp_path, "a", np.zeros((4, 4), dtype=int), np.zeros((4, 4), dtype=int))
        save_mask(LabelMask(np.zeros((4, 4), dtype=np.int64), classes=2),
                  tmp_path / "gt" / "orphan.png")
        with pytest.raises(MaskIOError, match="orphan"):
            evaluate_dataset(tmp_path / "pred", tmp_path / "gt")

    def test_empty_gt_dir_rejected(self, tmp_path):
        (tmp_path / "pred").mkdir()
        (tmp_path / "gt").mkdir()
        with pytest.raises(MaskIOError):
            evaluate_dataset(tmp_path / "pred", tmp_path / "gt")

    def test_report_serialization(self, tmp_path):
        self._write_pair(tmp_path, "a", np.eye(4, dtype=int), np.eye(4, dtype=int))
        report = evaluate_dataset(tmp_path / "pred", tmp_path / "gt")
        report.write(tmp_path / "report.json")
        payload = json.loads((tmp_path / "report.json").read_text())
        assert set(payload["all_class"]) == {"iou", "f1", "recall", "precision"}
        assert set(payload["per_class"]["1"]) == {"iou", "f1", "f2", "precision", "recall"}
        with (tmp_path / "report.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["name", "f1", "f2", "precision", "recall", "score"]
        assert len(rows) == 2


class TestOracleSweep:
    def test_200_random_pairs_match_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            pred_arr = rng.integers(0, 2, size=(16, 16))
            gt_arr = rng.integers(0, 2, size=(16, 16))
            counts = confusion(LabelMask(pred_arr, classes=2), LabelMask(gt_arr, classes=2), 2)
            oracle = brute_force_counts(pred_arr, gt_arr, 2)
            for c in range(2):
                expected = brute_force_metrics(oracle[c])
                actual = per_class_metrics(counts, c)
                for key in expected:
                    assert abs(actual[key] - expected[key]) <= 1e-12
