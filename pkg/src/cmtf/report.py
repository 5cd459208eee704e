"""Render the evaluation report: a delimited summary plus PNG figures.

Outputs land in ``<out_dir>/report/``:

    report.csv          one row per model with direction and price metrics
    f1_bars.png         micro F1 of the trained model vs the references
    training_curve.png  train/validation loss per epoch (when history exists)
    ledger.png          per-period feature selection frequencies (when any)

The ``external_baselines`` block of eval.json is passed through into
report.csv with source "external", so numbers computed outside this
package can sit next to the internal ones without touching the pipeline.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # file rendering only; no display is ever assumed
import matplotlib.pyplot as plt

from .config import PipelineConfig
from .pipeline import EVAL, HISTORY, LEDGER, _out_dir, _record_stage, _require

log = logging.getLogger("cmtf.report")

REPORT_DIR = "report"
REPORT_CSV = "report.csv"
F1_FIG = "f1_bars.png"
CURVE_FIG = "training_curve.png"
LEDGER_FIG = "ledger.png"

_CSV_HEADER = ["model", "source", "precision", "recall", "f1", "accuracy", "rmse", "mape"]


def _metric_row(name: str, source: str, blob: dict) -> list:
    direction = blob.get("direction", {}).get("micro", {})
    reg = blob.get("regression", {})

    def cell(d, key):
        return repr(float(d[key])) if key in d else ""

    return [
        name,
        source,
        cell(direction, "precision"),
        cell(direction, "recall"),
        cell(direction, "f1"),
        cell(direction, "accuracy"),
        cell(reg, "rmse"),
        cell(reg, "mape"),
    ]


def _write_report_csv(path: Path, report: dict) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_HEADER)
        for name in sorted(report["models"]):
            w.writerow(_metric_row(name, "internal", report["models"][name]))
        for name in sorted(report.get("external_baselines", {})):
            w.writerow(_metric_row(name, "external", report["external_baselines"][name]))


def _plot_f1(path: Path, report: dict) -> None:
    names = sorted(report["models"])
    scores = [report["models"][n]["direction"]["micro"]["f1"] for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, scores, color="#4878a8")
    ax.set_ylabel("micro F1")
    ax.set_ylim(0, 1)
    ax.set_title("Next-day direction, test range")
    for i, s in enumerate(scores):
        ax.text(i, s + 0.01, f"{s:.3f}", ha="center", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_training_curve(path: Path, history_blob: dict) -> bool:
    history = history_blob.get("history", [])
    if not history:
        return False
    epochs = [h["epoch"] for h in history]
    train = [h["train_loss"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, train, label="train", marker="o", markersize=3)
    if history[0].get("val_loss") is not None:
        ax.plot(epochs, [h["val_loss"] for h in history], label="validation", marker="o", markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("Training loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def _plot_ledger(path: Path, ledger_blob: dict, max_features: int = 25) -> bool:
    counts = ledger_blob.get("counts", {})
    n_periods = len(ledger_blob.get("periods", []))
    if not counts or n_periods == 0:
        return False
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_features]
    names = [k for k, _ in ranked]
    freqs = [v / n_periods for _, v in ranked]
    fig, ax = plt.subplots(figsize=(7, max(3, 0.3 * len(names) + 1)))
    ax.barh(range(len(names)), freqs, color="#6a9955")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel(f"selection frequency over {n_periods} period(s)")
    ax.set_xlim(0, 1)
    ax.set_title("Feature importance ledger")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def stage_report(cfg: PipelineConfig) -> None:
    """Summarize eval.json into report.csv and render the figures."""
    out = _out_dir(cfg)
    report = json.loads(_require(out, EVAL).read_text(encoding="utf-8"))
    rdir = out / REPORT_DIR
    rdir.mkdir(parents=True, exist_ok=True)

    outputs = [rdir / REPORT_CSV, rdir / F1_FIG]
    _write_report_csv(rdir / REPORT_CSV, report)
    _plot_f1(rdir / F1_FIG, report)

    history_path = out / HISTORY
    if history_path.exists():
        blob = json.loads(history_path.read_text(encoding="utf-8"))
        if _plot_training_curve(rdir / CURVE_FIG, blob):
            outputs.append(rdir / CURVE_FIG)

    ledger_path = out / LEDGER
    if ledger_path.exists():
        blob = json.loads(ledger_path.read_text(encoding="utf-8"))
        if _plot_ledger(rdir / LEDGER_FIG, blob):
            outputs.append(rdir / LEDGER_FIG)

    log.info("report written to %s (%d files)", rdir, len(outputs))
    _record_stage(out, cfg, "report", outputs)
