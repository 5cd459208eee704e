"""Direction-classification and price-regression metrics.

Degenerate denominators (no positive predictions, no positive truths) are
defined as 0 and flagged rather than raised, so downstream comparisons
over many stocks never die on one pathological column. Multi-stock
summaries are micro-averaged: confusion counts are pooled across stocks
before the ratios are formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, y_true: np.ndarray, y_pred: np.ndarray) -> "ConfusionCounts":
        t = np.asarray(y_true).astype(np.int64).ravel()
        p = np.asarray(y_pred).astype(np.int64).ravel()
        if t.shape != p.shape:
            raise DimensionError(f"truth shape {t.shape} != prediction shape {p.shape}")
        for arr, name in ((t, "truth"), (p, "prediction")):
            bad = (arr != 0) & (arr != 1)
            if bad.any():
                raise DimensionError(f"{name} labels must be 0/1, found {arr[bad][0]}")
        return cls(
            tp=int(((p == 1) & (t == 1)).sum()),
            fp=int(((p == 1) & (t == 0)).sum()),
            tn=int(((p == 0) & (t == 0)).sum()),
            fn=int(((p == 0) & (t == 1)).sum()),
        )


@dataclass
class ClassificationMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    counts: ConfusionCounts
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "tn": self.counts.tn,
            "fn": self.counts.fn,
            "flags": list(self.flags),
        }


def classification_metrics(counts: ConfusionCounts) -> ClassificationMetrics:
    flags = []
    if counts.tp + counts.fp == 0:
        precision = 0.0
        flags.append("no_positive_predictions")
    else:
        precision = counts.tp / (counts.tp + counts.fp)
    if counts.tp + counts.fn == 0:
        recall = 0.0
        flags.append("no_positive_truths")
    else:
        recall = counts.tp / (counts.tp + counts.fn)
    if precision + recall == 0.0:
        f1 = 0.0
        flags.append("f1_undefined")
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    accuracy = (counts.tp + counts.tn) / counts.total if counts.total else 0.0
    return ClassificationMetrics(precision, recall, f1, accuracy, counts, flags)


def direction_report(y_true: np.ndarray, y_pred: np.ndarray, tickers: list[str]) -> dict:
    """Per-stock metrics plus a micro-averaged pooled summary.

    Inputs are (days, stocks) 0/1 matrices; pooling sums the per-stock
    confusion counts before forming the ratios.
    """
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if t.ndim == 1:
        t = t[:, None]
    if p.ndim == 1:
        p = p[:, None]
    if t.shape != p.shape or t.shape[1] != len(tickers):
        raise DimensionError(
            f"shapes {t.shape} / {p.shape} do not line up with {len(tickers)} tickers"
        )
    per_stock = {}
    pooled = ConfusionCounts()
    for j, name in enumerate(tickers):
        counts = ConfusionCounts.from_predictions(t[:, j], p[:, j])
        per_stock[name] = classification_metrics(counts).to_json()
        pooled = pooled + counts
    return {"per_stock": per_stock, "micro": classification_metrics(pooled).to_json()}


@dataclass
class RegressionMetrics:
    rmse: float
    mape: float  # percent

    def to_json(self) -> dict:
        return {"rmse": self.rmse, "mape": self.mape}


def regression_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> RegressionMetrics:
    """Root-mean-square error and mean absolute percentage error (in percent)."""
    t = np.asarray(y_true, dtype=np.float64).ravel()
    p = np.asarray(y_pred, dtype=np.float64).ravel()
    if t.shape != p.shape:
        raise DimensionError(f"truth shape {t.shape} != prediction shape {p.shape}")
    if t.size == 0:
        raise DimensionError("cannot score zero predictions")
    if np.any(t == 0.0):
        raise NumericError("percentage error is undefined when a true value is 0")
    rmse = float(np.sqrt(np.mean((p - t) ** 2)))
    mape = float(100.0 * np.mean(np.abs((p - t) / t)))
    return RegressionMetrics(rmse, mape)
