"""Command-line behavior: stage dispatch, overrides, and exit codes."""

import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from cmtf import cli, pipeline
from test_pipeline import read_json, write_config


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """synth .. evaluate driven entirely through cli.main."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = write_config(
        root / "cfg.json", root / "run", root / "data",
        retrain_period_days=0,
        synth={"kind": "planted", "n_stocks": 2, "n_days": 140, "seed": 3},
    )
    for stage in ("synth", "ingest", "encode", "select", "train", "evaluate"):
        assert cli.main([stage, "--config", str(cfg_path)]) == 0, stage
    return cfg_path, root / "run"


def clone_cli_run(cli_run, tmp_path):
    cfg_path, out = cli_run
    dst = tmp_path / "run"
    shutil.copytree(out, dst)
    blob = json.loads(cfg_path.read_text(encoding="utf-8"))
    blob["out_dir"] = str(dst)
    new_cfg = tmp_path / "cfg.json"
    new_cfg.write_text(json.dumps(blob), encoding="utf-8")
    return new_cfg, dst, blob


def test_full_chain_exits_zero_and_writes_eval(cli_run):
    _, out = cli_run
    report = read_json(out / pipeline.EVAL)
    assert report["task"] == "classification"


def test_report_stage_renders_csv_and_figures(cli_run, tmp_path):
    cfg_path, out = cli_run
    assert cli.main(["report", "--config", str(cfg_path)]) == 0
    rdir = out / "report"
    with (rdir / "report.csv").open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["model"] for r in rows} >= {"cmtf", "zero_change", "linear"}
    assert (rdir / "f1_bars.png").stat().st_size > 0
    assert (rdir / "training_curve.png").stat().st_size > 0


def test_out_override_redirects_artifacts(cli_run, tmp_path):
    cfg_path, _ = cli_run
    alt = tmp_path / "elsewhere"
    assert cli.main(["ingest", "--config", str(cfg_path), "--out", str(alt)]) == 0
    assert (alt / pipeline.INGESTED).exists()


def test_seed_override_lands_in_eval(cli_run, tmp_path):
    cfg_path, out, _ = clone_cli_run(cli_run, tmp_path)
    assert cli.main(["evaluate", "--config", str(cfg_path), "--seed", "99"]) == 0
    assert read_json(out / pipeline.EVAL)["seed"] == 99


def test_tune_with_trial_and_pruner_overrides(cli_run, tmp_path):
    cfg_path, out, blob = clone_cli_run(cli_run, tmp_path)
    blob["search_space"] = {
        "d_model": [8, 16],
        "n_heads": [2],
        "n_layers": [1],
        "ffn_dim": [16],
        "learning_rate": [1e-3],
        "batch_size": [32],
        "epochs": [1],
    }
    cfg_path.write_text(json.dumps(blob), encoding="utf-8")
    code = cli.main(
        ["tune", "--config", str(cfg_path), "--trials", "2", "--pruner", "none"]
    )
    assert code == 0
    study = read_json(out / pipeline.STUDY)
    assert len(study["trials"]) == 2
    assert (out / pipeline.BEST_PARAMS).exists()


# -- failure modes map onto exit codes ---------------------------------------


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 1, "data": {"prices": "p.csv"}, "typo": 1}))
    assert cli.main(["ingest", "--config", str(cfg)]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["ingest", "--config", str(tmp_path / "absent.json")]) == 2


def test_bad_data_exits_3(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    (data / "prices.csv").write_text(
        "date,ticker,open,high,low,close,volume\n"
        "2024-01-02,AAA,10,11,9,-10,100\n",
        encoding="utf-8",
    )
    cfg_path = write_config(tmp_path / "cfg.json", tmp_path / "run", data, synth=None)
    assert cli.main(["ingest", "--config", str(cfg_path)]) == 3


def test_numeric_failure_exits_4(cli_run, tmp_path):
    cfg_path, _, blob = clone_cli_run(cli_run, tmp_path)
    # starve the solver so it cannot reach the tolerance
    blob["selection"]["max_iter"] = 2
    cfg_path.write_text(json.dumps(blob), encoding="utf-8")
    assert cli.main(["select", "--config", str(cfg_path)]) == 4


def test_stage_out_of_order_exits_3(tmp_path):
    # a missing upstream artifact is a data problem, same family as bad CSVs
    cfg_path = write_config(tmp_path / "cfg.json", tmp_path / "run", tmp_path / "data")
    assert cli.main(["train", "--config", str(cfg_path)]) == 3


def test_invalid_log_level_exits_2(cli_run, monkeypatch):
    cfg_path, _ = cli_run
    monkeypatch.setenv("CMTF_LOG", "chatty")
    assert cli.main(["ingest", "--config", str(cfg_path)]) == 2


def test_nonpositive_parallelism_exits_2(cli_run):
    cfg_path, _ = cli_run
    assert cli.main(["ablate", "--config", str(cfg_path), "--parallelism", "0"]) == 2


def test_missing_stage_argument_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2


def test_module_entrypoint_runs_in_a_subprocess(cli_run):
    cfg_path, _ = cli_run
    proc = subprocess.run(
        [sys.executable, "-m", "cmtf.cli", "ingest", "--config", str(cfg_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
