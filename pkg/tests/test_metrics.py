"""Classification and regression metric arithmetic."""

import numpy as np
import pytest

from cmtf import metrics
from cmtf.errors import DimensionError, NumericError


def test_fixed_confusion_matrix_values():
    # TP=3 FP=1 FN=2 TN=4: precision 0.75, recall 0.6, f1 2/3, accuracy 0.7
    counts = metrics.ConfusionCounts(tp=3, fp=1, tn=4, fn=2)
    m = metrics.classification_metrics(counts)
    assert abs(m.precision - 0.75) <= 1e-12
    assert abs(m.recall - 0.60) <= 1e-12
    assert abs(m.f1 - 2 / 3) <= 1e-12
    assert abs(m.accuracy - 0.7) <= 1e-12
    assert m.flags == []


def test_counts_from_predictions():
    y_true = np.array([1, 1, 1, 1, 1, 0, 0, 0, 0, 0])
    y_pred = np.array([1, 1, 1, 0, 0, 1, 0, 0, 0, 0])
    counts = metrics.ConfusionCounts.from_predictions(y_true, y_pred)
    assert (counts.tp, counts.fp, counts.fn, counts.tn) == (3, 1, 2, 4)


def test_counts_reject_non_binary():
    with pytest.raises(DimensionError):
        metrics.ConfusionCounts.from_predictions(np.array([0, 2]), np.array([0, 1]))
    with pytest.raises(DimensionError):
        metrics.ConfusionCounts.from_predictions(np.array([0, 1]), np.array([0, 1, 1]))


def test_degenerate_no_positive_predictions():
    m = metrics.classification_metrics(metrics.ConfusionCounts(tp=0, fp=0, tn=5, fn=3))
    assert m.precision == 0.0 and m.f1 == 0.0
    assert "no_positive_predictions" in m.flags
    assert "f1_undefined" in m.flags


def test_degenerate_no_positive_truths():
    m = metrics.classification_metrics(metrics.ConfusionCounts(tp=0, fp=2, tn=5, fn=0))
    assert m.recall == 0.0
    assert "no_positive_truths" in m.flags


def test_direction_report_micro_pools_counts():
    # stock A: tp=1 fp=1; stock B: tp=1 fn=1. Micro pools before dividing.
    y_true = np.array([[1, 1], [0, 1], [0, 0]])
    y_pred = np.array([[1, 1], [1, 0], [0, 0]])
    report = metrics.direction_report(y_true, y_pred, ["A", "B"])
    micro = report["micro"]
    assert micro["tp"] == 2 and micro["fp"] == 1 and micro["fn"] == 1
    np.testing.assert_allclose(micro["precision"], 2 / 3)
    np.testing.assert_allclose(micro["recall"], 2 / 3)
    assert set(report["per_stock"]) == {"A", "B"}
    assert report["per_stock"]["A"]["precision"] == 0.5


def test_direction_report_shape_guard():
    with pytest.raises(DimensionError):
        metrics.direction_report(np.zeros((3, 2)), np.zeros((3, 2)), ["A"])


def test_micro_differs_from_macro_on_imbalanced_stocks():
    # stock A has 9 correct positives, stock B one wrong call; micro is
    # dominated by A while a plain average of per-stock f1 is not
    y_true = np.array([[1, 0]] * 9 + [[1, 1]])
    y_pred = np.array([[1, 0]] * 9 + [[1, 0]])
    report = metrics.direction_report(y_true, y_pred, ["A", "B"])
    macro_f1 = np.mean([report["per_stock"][s]["f1"] for s in ("A", "B")])
    assert report["micro"]["f1"] > macro_f1


def test_regression_metrics_formulas():
    y_true = np.array([100.0, 200.0, 400.0])
    y_pred = np.array([110.0, 190.0, 400.0])
    m = metrics.regression_metrics(y_true, y_pred)
    np.testing.assert_allclose(m.rmse, np.sqrt((100 + 100 + 0) / 3))
    np.testing.assert_allclose(m.mape, 100 * (0.1 + 0.05 + 0.0) / 3)


def test_regression_metrics_guards():
    with pytest.raises(NumericError):
        metrics.regression_metrics(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
    with pytest.raises(DimensionError):
        metrics.regression_metrics(np.array([]), np.array([]))
    with pytest.raises(DimensionError):
        metrics.regression_metrics(np.array([1.0]), np.array([1.0, 2.0]))
