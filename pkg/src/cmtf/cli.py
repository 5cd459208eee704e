"""Command-line entry point.

Every stage takes the same config file and run directory; the stage name
picks what to run. Typical session:

    cmtf synth    --config cfg.json
    cmtf ingest   --config cfg.json
    cmtf encode   --config cfg.json
    cmtf select   --config cfg.json
    cmtf tune     --config cfg.json --trials 30
    cmtf train    --config cfg.json
    cmtf evaluate --config cfg.json
    cmtf report   --config cfg.json

Log verbosity comes from the CMTF_LOG environment variable (error, warn,
info, debug; default warn). Failures exit with the code of the error
class: config 2, data/windowing 3, numeric/training 4.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from . import pipeline
from .config import load_config
from .errors import CmtfError, ConfigError
from .report import stage_report

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

_STAGES = {
    "synth": "generate a synthetic dataset at the configured data paths",
    "ingest": "load, validate, and impute the raw CSVs",
    "encode": "fuse modalities onto the daily grid and standardize",
    "select": "run correlation screen + grouped stability selection",
    "train": "fit the direction model on the train range",
    "tune": "search hyperparameters against validation loss",
    "evaluate": "score the model and baselines on the test range",
    "report": "write report.csv and the PNG figures",
    "ablate": "run the 8-cell modality/interpretation grid",
}


def _configure_logging() -> None:
    raw = os.environ.get("CMTF_LOG", "warn").lower()
    if raw not in _LOG_LEVELS:
        raise ConfigError(f"CMTF_LOG must be one of {sorted(_LOG_LEVELS)}, got {raw!r}")
    logging.basicConfig(level=_LOG_LEVELS[raw], format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to the pipeline config JSON")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="override the run directory")
    common.add_argument(
        "--parallelism", type=int, default=1,
        help="worker threads for tune/ablate (1 = fully sequential)",
    )

    parser = argparse.ArgumentParser(prog="cmtf", description="cross-modal daily forecasting pipeline")
    sub = parser.add_subparsers(dest="stage", required=True, metavar="stage")
    parsers = {name: sub.add_parser(name, help=blurb, parents=[common]) for name, blurb in _STAGES.items()}
    parsers["tune"].add_argument("--trials", type=int, default=None, help="override hpo.n_trials")
    parsers["tune"].add_argument(
        "--pruner", choices=["ratio", "halving", "none"], default=None,
        help="override the configured pruner kind",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        if args.parallelism < 1:
            raise ConfigError(f"--parallelism must be >= 1, got {args.parallelism}")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, out_dir=args.out)

        if args.stage == "synth":
            pipeline.stage_synth(cfg)
        elif args.stage == "ingest":
            pipeline.stage_ingest(cfg)
        elif args.stage == "encode":
            pipeline.stage_encode(cfg)
        elif args.stage == "select":
            pipeline.stage_select(cfg)
        elif args.stage == "train":
            pipeline.stage_train(cfg)
        elif args.stage == "tune":
            pipeline.stage_tune(
                cfg, n_trials=args.trials, parallelism=args.parallelism, pruner_kind=args.pruner
            )
        elif args.stage == "evaluate":
            pipeline.stage_evaluate(cfg)
        elif args.stage == "report":
            stage_report(cfg)
        elif args.stage == "ablate":
            pipeline.stage_ablate(cfg, parallelism=args.parallelism)
        else:  # pragma: no cover - argparse restricts choices
            raise ConfigError(f"unknown stage {args.stage!r}")
    except CmtfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
