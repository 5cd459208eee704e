"""Staged pipeline: synth/ingest -> encode -> select -> train|tune -> evaluate.

Each stage reads only the artifacts of earlier stages from the run
directory and writes its own, recording them in ``manifest.json``. Missing
upstream artifacts raise a staged-pipeline error naming the file and the
stage that produces it. All randomness flows from the config seed, so a
rerun with an identical config reproduces every report and checkpoint
byte for byte.

Run-directory layout:

    ingested.json                validated, imputed input data
    frame.csv, frame_meta.json   scaled daily feature frame
    scaler.json, splits.json     train-range scaler and chronological split
    closes.csv                   raw aligned close prices (targets/truths)
    selection.json               surviving feature columns
    study.json, best_params.json hyperparameter search outputs
    model.json, history.json     trained checkpoint and loss curves
    eval.json, predictions.csv   metrics and per-day model outputs
    ledger.json                  per-period feature-selection counts
    ablation/                    the 2x2x2 flag grid, one subdir per cell
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import baselines, data as data_mod, encoding, model as model_mod, selection as sel_mod
from .config import AblationFlags, ModelSettings, PipelineConfig, config_hash
from .data import Calendar, Split, format_date
from .errors import ConfigError, PipelineError, WindowError
from .hpo import save_study, tune
from .model import TrainSettings, TransformerConfig, predicted_direction
from .metrics import direction_report, regression_metrics

log = logging.getLogger("cmtf.pipeline")

INGESTED = "ingested.json"
FRAME = "frame.csv"
FRAME_META = "frame_meta.json"
SCALER = "scaler.json"
SPLITS = "splits.json"
CLOSES = "closes.csv"
SELECTION = "selection.json"
STUDY = "study.json"
BEST_PARAMS = "best_params.json"
MODEL = "model.json"
HISTORY = "history.json"
EVAL = "eval.json"
PREDICTIONS = "predictions.csv"
LEDGER = "ledger.json"
ABLATION_CSV = "ablation.csv"
MANIFEST = "manifest.json"

_PRODUCERS = {
    INGESTED: "ingest",
    FRAME: "encode",
    FRAME_META: "encode",
    SCALER: "encode",
    SPLITS: "encode",
    CLOSES: "encode",
    SELECTION: "select",
    STUDY: "tune",
    BEST_PARAMS: "tune",
    MODEL: "train",
    HISTORY: "train",
    EVAL: "evaluate",
    PREDICTIONS: "evaluate",
    LEDGER: "evaluate",
}


# ---------------------------------------------------------------------------
# Artifact plumbing
# ---------------------------------------------------------------------------


def _out_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, blob: dict) -> None:
    path.write_text(json.dumps(blob, indent=2, sort_keys=True), encoding="utf-8")


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _require(out: Path, name: str) -> Path:
    path = out / name
    if not path.exists():
        producer = _PRODUCERS.get(name, "an earlier")
        raise PipelineError(f"missing artifact {path}; run the '{producer}' stage first")
    return path


def _record_stage(out: Path, cfg: PipelineConfig, stage: str, outputs: list[Path]) -> None:
    mpath = out / MANIFEST
    chash = config_hash(cfg)
    manifest = {"schema_version": 1, "config_hash": chash, "stages": {}}
    if mpath.exists():
        prev = _read_json(mpath)
        if prev.get("config_hash") == chash:
            manifest = prev
        else:
            log.warning("config hash changed; starting a fresh manifest in %s", out)
    manifest["stages"][stage] = {
        "outputs": [str(p) for p in outputs],
        "completed_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    _write_json(mpath, manifest)


def _write_closes(path: Path, calendar: Calendar, tickers: list[str], closes: np.ndarray) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date"] + tickers)
        for i, day in enumerate(calendar.days):
            w.writerow([format_date(day)] + [repr(float(v)) for v in closes[i]])


def _read_closes(path: Path) -> tuple[list[str], np.ndarray]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        tickers = header[1:]
        rows = [[float(c) for c in row[1:]] for row in reader if row]
    return tickers, np.asarray(rows, dtype=np.float64)


def _read_splits(path: Path) -> Split:
    blob = _read_json(path)
    return Split(tuple(blob["train"]), tuple(blob["validation"]), tuple(blob["test"]))


def _load_frame(out: Path) -> encoding.AlignedFrame:
    meta = _read_json(_require(out, FRAME_META))
    return encoding.read_frame_csv(_require(out, FRAME), meta)


def _resolved_model_settings(cfg: PipelineConfig, out: Path) -> ModelSettings:
    """Config model settings, overridden by tuned best_params.json when present."""
    best = out / BEST_PARAMS
    if not best.exists():
        return cfg.model
    params = _read_json(best)["params"]
    merged = cfg.model.to_json()
    for key in ("d_model", "n_heads", "n_layers", "ffn_dim", "learning_rate", "batch_size", "epochs"):
        if key in params:
            merged[key] = params[key]
    log.info("using tuned hyperparameters from %s", best)
    return ModelSettings(**merged)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_synth(cfg: PipelineConfig) -> None:
    """Generate a synthetic dataset and write it to the configured data paths."""
    from .synth import generate

    if cfg.synth is None:
        raise ConfigError("config has no 'synth' section; nothing to generate")
    dataset = generate(cfg.synth)
    out = _out_dir(cfg)
    written: list[Path] = []

    def emit(path_str, writer, series):
        if path_str is None:
            return
        path = Path(path_str)
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path, series)
        written.append(path)

    emit(cfg.data.prices, data_mod.write_prices, dataset.prices)
    emit(cfg.data.macro, data_mod.write_macro, dataset.macro)
    emit(cfg.data.news, data_mod.write_news, dataset.news)
    emit(cfg.data.reports, data_mod.write_reports, dataset.reports)
    log.info("synth (%s) wrote %d files", cfg.synth.kind, len(written))
    _record_stage(out, cfg, "synth", written)


def stage_ingest(cfg: PipelineConfig) -> None:
    """Load, validate, and impute the raw CSVs into one JSON artifact."""
    out = _out_dir(cfg)
    dataset = data_mod.MarketData(
        prices=[
            data_mod.interpolate_missing(s, "linear") for s in data_mod.load_prices(cfg.data.prices)
        ],
        macro=[]
        if cfg.data.macro is None
        else [data_mod.interpolate_missing(s, "linear") for s in data_mod.load_macro(cfg.data.macro)],
        news=[]
        if cfg.data.news is None
        else [data_mod.interpolate_missing(s, "zero") for s in data_mod.load_news(cfg.data.news)],
        reports=[] if cfg.data.reports is None else data_mod.load_reports(cfg.data.reports),
    )
    data_mod.save_market_data(out / INGESTED, dataset)
    log.info(
        "ingested %d price, %d macro, %d news, %d report series",
        len(dataset.prices), len(dataset.macro), len(dataset.news), len(dataset.reports),
    )
    _record_stage(out, cfg, "ingest", [out / INGESTED])


def stage_encode(cfg: PipelineConfig) -> None:
    """Fuse modalities onto the daily grid, split chronologically, standardize."""
    out = _out_dir(cfg)
    dataset = data_mod.load_market_data(_require(out, INGESTED))
    calendar = Calendar.union_of_prices(dataset.prices)
    raw = encoding.fuse(
        dataset,
        calendar,
        cfg.wma_window,
        include_news=cfg.ablation.use_news,
        include_reports=cfg.ablation.use_reports,
    )
    splits = data_mod.split_chronological(calendar, cfg.split_ratios)
    scaler = encoding.fit_scaler(raw, splits.train)
    if scaler.dropped:
        log.warning("dropping constant columns: %s", scaler.dropped)
    frame = encoding.apply_scaler(raw, scaler)

    tickers = dataset.tickers
    closes = np.column_stack([raw.column(encoding.close_column(t)) for t in tickers])

    encoding.write_frame_csv(out / FRAME, frame)
    _write_json(out / FRAME_META, encoding.frame_meta(frame))
    _write_json(out / SCALER, scaler.to_json())
    _write_json(
        out / SPLITS,
        {
            "schema_version": 1,
            "n_days": len(calendar),
            "train": list(splits.train),
            "validation": list(splits.validation),
            "test": list(splits.test),
        },
    )
    _write_closes(out / CLOSES, calendar, tickers, closes)
    log.info("encoded frame: %d days x %d columns (%s)", frame.n_days, len(frame.columns), cfg.ablation.tag())
    _record_stage(out, cfg, "encode", [out / p for p in (FRAME, FRAME_META, SCALER, SPLITS, CLOSES)])


def _selection_blob(cfg: PipelineConfig, frame: encoding.AlignedFrame, fit_range: tuple[int, int]) -> dict:
    if not cfg.ablation.use_interpretation:
        return {
            "schema_version": 1,
            "passthrough": True,
            "fallback_all_columns": False,
            "model_columns": list(frame.columns),
        }
    result = sel_mod.stability_select(frame, cfg.selection, fit_range)
    blob = result.to_json()
    blob["passthrough"] = False
    if result.selected:
        blob["fallback_all_columns"] = False
        blob["model_columns"] = list(result.selected)
    else:
        log.warning("selection kept no features; passing every encoded column through")
        blob["fallback_all_columns"] = True
        blob["model_columns"] = list(frame.columns)
    return blob


def stage_select(cfg: PipelineConfig) -> None:
    """Run the stability-selection stack on the training range (or pass through)."""
    out = _out_dir(cfg)
    frame = _load_frame(out)
    splits = _read_splits(_require(out, SPLITS))
    blob = _selection_blob(cfg, frame, splits.train)
    _write_json(out / SELECTION, blob)
    log.info("selection kept %d of %d columns", len(blob["model_columns"]), len(frame.columns))
    _record_stage(out, cfg, "select", [out / SELECTION])


def _val_range_or_none(seq_len: int, val: tuple[int, int], n_days: int):
    try:
        model_mod.window_days(seq_len, val, n_days)
        return val
    except (WindowError, ConfigError):
        return None


def stage_train(cfg: PipelineConfig) -> None:
    """Fit the encoder on the train range with the validation range monitored."""
    out = _out_dir(cfg)
    frame = _load_frame(out)
    splits = _read_splits(_require(out, SPLITS))
    columns = _read_json(_require(out, SELECTION))["model_columns"]
    tickers, closes = _read_closes(_require(out, CLOSES))
    ms = _resolved_model_settings(cfg, out)

    features = frame.select_columns(columns).values
    model_cfg = TransformerConfig(
        n_features=len(columns),
        seq_len=ms.seq_len,
        n_outputs=len(tickers),
        d_model=ms.d_model,
        n_heads=ms.n_heads,
        n_layers=ms.n_layers,
        ffn_dim=ms.ffn_dim,
        task=ms.task,
    )
    settings = TrainSettings(
        epochs=ms.epochs, batch_size=ms.batch_size, learning_rate=ms.learning_rate, seed=cfg.seed
    )
    result = model_mod.train_model(
        features,
        closes,
        model_cfg,
        settings,
        fit_range=splits.train,
        val_range=_val_range_or_none(ms.seq_len, splits.validation, frame.n_days),
        feature_names=list(columns),
    )
    model_mod.save_model(out / MODEL, result.model)
    _write_json(
        out / HISTORY,
        {
            "schema_version": 1,
            "history": result.history,
            "tie_count": result.tie_count,
            "n_train_windows": result.n_train_windows,
            "n_val_windows": result.n_val_windows,
        },
    )
    last = result.history[-1]
    log.info(
        "trained %d epochs: train_loss=%.6f val_loss=%s",
        len(result.history), last["train_loss"], last["val_loss"],
    )
    _record_stage(out, cfg, "train", [out / MODEL, out / HISTORY])


def stage_tune(cfg: PipelineConfig, n_trials: int | None = None, parallelism: int = 1,
               pruner_kind: str | None = None) -> None:
    """Search the hyperparameter space, minimizing validation loss."""
    out = _out_dir(cfg)
    frame = _load_frame(out)
    splits = _read_splits(_require(out, SPLITS))
    columns = _read_json(_require(out, SELECTION))["model_columns"]
    tickers, closes = _read_closes(_require(out, CLOSES))
    features = frame.select_columns(columns).values

    pruner_cfg = cfg.hpo.pruner
    if pruner_kind is not None:
        pruner_cfg = dataclasses.replace(pruner_cfg, kind=pruner_kind)
    val_range = _val_range_or_none(cfg.model.seq_len, splits.validation, frame.n_days)

    def objective(trial) -> float:
        p = trial.params
        model_cfg = TransformerConfig(
            n_features=len(columns),
            seq_len=cfg.model.seq_len,
            n_outputs=len(tickers),
            d_model=int(p.get("d_model", cfg.model.d_model)),
            n_heads=int(p.get("n_heads", cfg.model.n_heads)),
            n_layers=int(p.get("n_layers", cfg.model.n_layers)),
            ffn_dim=int(p.get("ffn_dim", cfg.model.ffn_dim)),
            task=cfg.model.task,
        )
        settings = TrainSettings(
            epochs=int(p.get("epochs", cfg.model.epochs)),
            batch_size=int(p.get("batch_size", cfg.model.batch_size)),
            learning_rate=float(p.get("learning_rate", cfg.model.learning_rate)),
            seed=cfg.seed,
        )
        result = model_mod.train_model(
            features, closes, model_cfg, settings,
            fit_range=splits.train, val_range=val_range,
            epoch_hook=lambda epoch, value: trial.report(epoch, value),
        )
        last = result.history[-1]
        return last["val_loss"] if last["val_loss"] is not None else last["train_loss"]

    study = tune(
        objective,
        cfg.search_space,
        n_trials if n_trials is not None else cfg.hpo.n_trials,
        cfg.seed,
        pruner_cfg,
        cfg.hpo.sampler,
        parallelism=parallelism,
    )
    save_study(out / STUDY, study)
    best = study.best_trial
    _write_json(
        out / BEST_PARAMS,
        {"schema_version": 1, "trial_number": best.number, "value": best.value, "params": best.params},
    )
    n_pruned = sum(1 for t in study.trials if t.state == "pruned")
    log.info(
        "tuning done: best value %.6f from trial %d (%d trials, %d pruned)",
        best.value, best.number, len(study.trials), n_pruned,
    )
    _record_stage(out, cfg, "tune", [out / STUDY, out / BEST_PARAMS])


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _direction_truth(closes: np.ndarray, days: np.ndarray) -> np.ndarray:
    labels, _ = model_mod.make_labels(closes)
    return labels[days]


def _evaluate_models(
    splits: Split,
    tickers: list[str],
    closes: np.ndarray,
    days: np.ndarray,
    cmtf_output: np.ndarray,
    task: str,
    features: np.ndarray,
) -> dict:
    """Metrics for the trained model plus the two reference predictors."""
    dir_true = _direction_truth(closes, days)
    price_true = closes[days + 1]
    prev_close = closes[days]

    cmtf_dir = predicted_direction(cmtf_output, prev_close if task == "regression" else None, task)
    zc_price = baselines.zero_change_price(closes, days)
    zc_dir = baselines.zero_change_direction(closes, days)

    t_fit = np.arange(splits.train[0], splits.train[1] - 1)
    linear = baselines.linear_fit(features[t_fit], closes[t_fit + 1])
    lin_price = baselines.linear_predict(linear, features[days])
    lin_dir = (lin_price > prev_close).astype(np.int64)

    models = {
        "cmtf": {"direction": direction_report(dir_true, cmtf_dir, tickers)},
        "zero_change": {
            "direction": direction_report(dir_true, zc_dir, tickers),
            "regression": regression_metrics(price_true, zc_price).to_json(),
        },
        "linear": {
            "direction": direction_report(dir_true, lin_dir, tickers),
            "regression": regression_metrics(price_true, lin_price).to_json(),
        },
    }
    if task == "regression":
        models["cmtf"]["regression"] = regression_metrics(price_true, cmtf_output).to_json()
    if linear.ridge_used:
        models["linear"]["ridge_fallback"] = True
    return models


def _write_predictions(path: Path, calendar: Calendar, tickers: list[str],
                       days: np.ndarray, output: np.ndarray, direction: np.ndarray) -> None:
    """Per-day model outputs; the date column is the day being predicted (t+1)."""
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "ticker", "output", "direction"])
        for i, t in enumerate(days):
            target_date = format_date(calendar.days[t + 1])
            for j, ticker in enumerate(tickers):
                w.writerow([target_date, ticker, repr(float(output[i, j])), int(direction[i, j])])


def stage_evaluate(cfg: PipelineConfig) -> None:
    """Score the model and baselines on the test range; write the eval report.

    With ``retrain_period_days`` > 0 the test window is walked forward:
    every period reruns selection and training on all data before the
    period start, and the importance ledger accumulates per-period
    selections. With 0 the checkpoint from the train stage is used as is.
    """
    out = _out_dir(cfg)
    frame = _load_frame(out)
    splits = _read_splits(_require(out, SPLITS))
    tickers, closes = _read_closes(_require(out, CLOSES))
    task = cfg.model.task
    ledger = sel_mod.ImportanceLedger()
    diagnostics: dict = {}

    if cfg.retrain_period_days == 0:
        trained = model_mod.load_model(_require(out, MODEL))
        sel_blob = _read_json(_require(out, SELECTION))
        columns = trained.feature_names or sel_blob["model_columns"]
        features = frame.select_columns(columns).values
        days = model_mod.window_days(trained.config.seq_len, splits.test, frame.n_days)
        output = model_mod.predict(trained, features, days)
        task = trained.config.task
        ledger.record(0, columns)
        diagnostics["fallback_all_columns"] = bool(sel_blob.get("fallback_all_columns", False))
    else:
        ms = _resolved_model_settings(cfg, out)
        test_lo, test_hi = splits.test
        period_starts = list(range(test_lo, test_hi - 1, cfg.retrain_period_days))
        day_chunks, out_chunks = [], []
        columns = list(frame.columns)
        for k, start in enumerate(period_starts):
            end = min(start + cfg.retrain_period_days, test_hi)
            blob = _selection_blob(cfg, frame, (0, start))
            columns = blob["model_columns"]
            ledger.record(k, columns)
            feats = frame.select_columns(columns).values
            model_cfg = TransformerConfig(
                n_features=len(columns), seq_len=ms.seq_len, n_outputs=len(tickers),
                d_model=ms.d_model, n_heads=ms.n_heads, n_layers=ms.n_layers,
                ffn_dim=ms.ffn_dim, task=ms.task,
            )
            settings = TrainSettings(
                epochs=ms.epochs, batch_size=ms.batch_size,
                learning_rate=ms.learning_rate, seed=cfg.seed,
            )
            result = model_mod.train_model(feats, closes, model_cfg, settings, fit_range=(0, start))
            days_k = np.arange(max(start, ms.seq_len - 1), min(end, frame.n_days - 1))
            if days_k.size == 0:
                continue
            day_chunks.append(days_k)
            out_chunks.append(model_mod.predict(result.model, feats, days_k))
        if not day_chunks:
            raise PipelineError("walk-forward evaluation produced no predictable days")
        days = np.concatenate(day_chunks)
        output = np.concatenate(out_chunks, axis=0)
        features = frame.select_columns(columns).values  # last period's view, for the linear fit
        diagnostics["n_periods"] = len(period_starts)

    models = _evaluate_models(splits, tickers, closes, days, output, task, features)
    direction = predicted_direction(output, closes[days] if task == "regression" else None, task)

    labels, ties = model_mod.make_labels(closes)
    diagnostics.update(
        {
            "label_ties": ties,
            "n_eval_days": int(days.size),
            "first_predicted_date": format_date(frame.calendar.days[int(days[0]) + 1]),
            "last_predicted_date": format_date(frame.calendar.days[int(days[-1]) + 1]),
            "walk_forward": cfg.retrain_period_days > 0,
            "retrain_period_days": cfg.retrain_period_days,
        }
    )

    report = {
        "schema_version": 1,
        "task": task,
        "seed": cfg.seed,
        "aggregation": "micro",
        "tickers": tickers,
        "split": {
            "train": list(splits.train),
            "validation": list(splits.validation),
            "test": list(splits.test),
        },
        "ablation": cfg.ablation.to_json(),
        "models": models,
        "external_baselines": {},
        "diagnostics": diagnostics,
    }
    _write_json(out / EVAL, report)
    _write_predictions(out / PREDICTIONS, frame.calendar, tickers, days, output, direction)
    _write_json(out / LEDGER, ledger.to_json())
    log.info(
        "evaluated %d days: cmtf micro F1 %.4f",
        days.size, models["cmtf"]["direction"]["micro"]["f1"],
    )
    _record_stage(out, cfg, "evaluate", [out / EVAL, out / PREDICTIONS, out / LEDGER])


# ---------------------------------------------------------------------------
# Ablation grid
# ---------------------------------------------------------------------------


def ablation_cells() -> list[AblationFlags]:
    return [
        AblationFlags(bool(i), bool(n), bool(r))
        for i in (1, 0)
        for n in (1, 0)
        for r in (1, 0)
    ]


def _cell_dir(out: Path, flags: AblationFlags) -> Path:
    return out / "ablation" / (
        f"I{int(flags.use_interpretation)}N{int(flags.use_news)}R{int(flags.use_reports)}"
    )


def run_cell(cfg: PipelineConfig, flags: AblationFlags) -> dict:
    """Run encode -> select -> train -> evaluate for one flag combination."""
    out = _out_dir(cfg)
    cdir = _cell_dir(out, flags)
    cdir.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(_require(out, INGESTED), cdir / INGESTED)
    if (out / BEST_PARAMS).exists():
        shutil.copyfile(out / BEST_PARAMS, cdir / BEST_PARAMS)
    cell_cfg = dataclasses.replace(cfg, out_dir=str(cdir), ablation=flags)
    stage_encode(cell_cfg)
    stage_select(cell_cfg)
    stage_train(cell_cfg)
    stage_evaluate(cell_cfg)
    return _read_json(cdir / EVAL)


def stage_ablate(cfg: PipelineConfig, parallelism: int = 1) -> None:
    """Run all 8 (+/-I, +/-N, +/-R) cells with shared data, seed, and splits."""
    out = _out_dir(cfg)
    _require(out, INGESTED)
    cells = ablation_cells()

    def run(flags: AblationFlags):
        try:
            return flags, run_cell(cfg, flags), None
        except Exception as exc:  # noqa: BLE001 - per-cell diagnostics, then abort
            return flags, None, exc

    if parallelism == 1:
        results = [run(flags) for flags in cells]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run, cells))

    failures = [(flags, exc) for flags, _, exc in results if exc is not None]
    if failures:
        detail = "; ".join(f"{flags.tag()}: {exc}" for flags, exc in failures)
        raise PipelineError(f"ablation cells failed: {detail}")

    path = out / ABLATION_CSV
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["cell", "use_interpretation", "use_news", "use_reports",
             "precision", "recall", "f1", "accuracy", "rmse", "mape"]
        )
        for flags, report, _ in results:
            micro = report["models"]["cmtf"]["direction"]["micro"]
            reg = report["models"]["cmtf"].get("regression", {})
            w.writerow(
                [
                    flags.tag(),
                    int(flags.use_interpretation), int(flags.use_news), int(flags.use_reports),
                    repr(micro["precision"]), repr(micro["recall"]),
                    repr(micro["f1"]), repr(micro["accuracy"]),
                    repr(reg["rmse"]) if reg else "",
                    repr(reg["mape"]) if reg else "",
                ]
            )
    log.info("ablation grid complete: %d cells", len(cells))
    _record_stage(out, cfg, "ablate", [path])
