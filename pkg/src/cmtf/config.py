"""JSON run configuration: schema, defaults, validation, and hashing.

A config file fully determines a run: data locations, fusion and selection
settings, model and training hyperparameters, the search space, ablation
switches, and the seed (which is mandatory, so no run has implicit
randomness). Unknown keys are rejected rather than ignored; a typo should
fail loudly, not silently fall back to a default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .hpo import PrunerConfig, SamplerConfig, SearchSpace
from .selection import SelectionConfig
from .synth import SynthConfig

SCHEMA_VERSION = 1


@dataclass
class DataPaths:
    prices: str
    macro: str | None = None
    news: str | None = None
    reports: str | None = None

    def to_json(self) -> dict:
        return {"prices": self.prices, "macro": self.macro, "news": self.news, "reports": self.reports}


@dataclass
class ModelSettings:
    seq_len: int = 30
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ffn_dim: int = 256
    task: str = "classification"
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.seq_len < 2:
            raise ConfigError(f"model.seq_len must be >= 2, got {self.seq_len}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"model.d_model ({self.d_model}) must be divisible by model.n_heads ({self.n_heads})"
            )
        if self.task not in ("classification", "regression"):
            raise ConfigError(f"model.task must be classification or regression, got {self.task!r}")

    def to_json(self) -> dict:
        return {
            "seq_len": self.seq_len,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "ffn_dim": self.ffn_dim,
            "task": self.task,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
        }


@dataclass
class AblationFlags:
    use_interpretation: bool = True
    use_news: bool = True
    use_reports: bool = True

    def to_json(self) -> dict:
        return {
            "use_interpretation": self.use_interpretation,
            "use_news": self.use_news,
            "use_reports": self.use_reports,
        }

    def tag(self) -> str:
        sign = lambda b: "+" if b else "-"  # noqa: E731 - tiny local formatter
        return f"{sign(self.use_interpretation)}I{sign(self.use_news)}N{sign(self.use_reports)}R"


@dataclass
class HpoSettings:
    n_trials: int = 30
    pruner: PrunerConfig = field(default_factory=PrunerConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigError(f"hpo.n_trials must be >= 1, got {self.n_trials}")

    def to_json(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "pruner": self.pruner.to_json(),
            "sampler": {
                "n_startup": self.sampler.n_startup,
                "gamma_split": self.sampler.gamma_split,
                "n_candidates": self.sampler.n_candidates,
            },
        }


@dataclass
class PipelineConfig:
    seed: int
    data: DataPaths
    out_dir: str = "runs/default"
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    wma_window: int = 30
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    search_space: SearchSpace = field(default_factory=SearchSpace)
    hpo: HpoSettings = field(default_factory=HpoSettings)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    retrain_period_days: int = 0
    synth: SynthConfig | None = None

    def __post_init__(self):
        if self.wma_window < 1:
            raise ConfigError(f"wma.window must be >= 1, got {self.wma_window}")
        if self.retrain_period_days < 0:
            raise ConfigError(
                f"retrain_period_days must be >= 0, got {self.retrain_period_days}"
            )

    def to_json(self) -> dict:
        sel = self.selection
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "data": self.data.to_json(),
            "split_ratios": list(self.split_ratios),
            "wma": {"window": self.wma_window},
            "selection": {
                "alpha": sel.alpha,
                "tau_corr": sel.tau_corr,
                "n_folds": sel.n_folds,
                "survival_threshold": sel.survival_threshold,
                "lag_count": sel.lag_count,
                "window_rows": sel.window_rows,
                "max_iter": sel.max_iter,
                "tol": sel.tol,
            },
            "model": self.model.to_json(),
            "search_space": self.search_space.to_json(),
            "hpo": self.hpo.to_json(),
            "ablation": self.ablation.to_json(),
            "retrain_period_days": self.retrain_period_days,
            "synth": None if self.synth is None else self.synth.to_json(),
        }


def _check_keys(blob: dict, allowed: set[str], where: str) -> None:
    unknown = set(blob) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)} (allowed: {sorted(allowed)})")


def _build(cls, blob: dict, where: str):
    """Instantiate a settings dataclass from a JSON section, strictly."""
    if not isinstance(blob, dict):
        raise ConfigError(f"{where}: expected a JSON object, got {type(blob).__name__}")
    fields = {f for f in cls.__dataclass_fields__}
    _check_keys(blob, fields, where)
    try:
        return cls(**blob)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_json(blob: dict, path: str = "<config>") -> PipelineConfig:
    if not isinstance(blob, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    allowed = {
        "schema_version", "seed", "out_dir", "data", "split_ratios", "wma",
        "selection", "model", "search_space", "hpo", "ablation",
        "retrain_period_days", "synth",
    }
    _check_keys(blob, allowed, path)
    version = blob.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    if "seed" not in blob:
        raise ConfigError(f"{path}: 'seed' is required; runs must not have implicit randomness")
    if "data" not in blob or "prices" not in blob["data"]:
        raise ConfigError(f"{path}: 'data.prices' is required")

    data = _build(DataPaths, blob["data"], f"{path}:data")

    ratios = blob.get("split_ratios", [0.6, 0.2, 0.2])
    if not (isinstance(ratios, list) and len(ratios) == 3):
        raise ConfigError(f"{path}: split_ratios must be a list of 3 numbers")

    wma_blob = blob.get("wma", {})
    if not isinstance(wma_blob, dict):
        raise ConfigError(f"{path}:wma: expected a JSON object")
    _check_keys(wma_blob, {"window"}, f"{path}:wma")

    hpo_blob = blob.get("hpo", {})
    if not isinstance(hpo_blob, dict):
        raise ConfigError(f"{path}:hpo: expected a JSON object")
    hpo_blob = dict(hpo_blob)
    _check_keys(hpo_blob, {"n_trials", "pruner", "sampler"}, f"{path}:hpo")
    if "pruner" in hpo_blob:
        hpo_blob["pruner"] = _build(PrunerConfig, hpo_blob["pruner"], f"{path}:hpo.pruner")
    if "sampler" in hpo_blob:
        hpo_blob["sampler"] = _build(SamplerConfig, hpo_blob["sampler"], f"{path}:hpo.sampler")

    synth_blob = blob.get("synth")

    return PipelineConfig(
        seed=int(blob["seed"]),
        data=data,
        out_dir=str(blob.get("out_dir", "runs/default")),
        split_ratios=tuple(float(r) for r in ratios),
        wma_window=int(wma_blob.get("window", 30)),
        selection=_build(SelectionConfig, blob.get("selection", {}), f"{path}:selection"),
        model=_build(ModelSettings, blob.get("model", {}), f"{path}:model"),
        search_space=SearchSpace.from_json(blob["search_space"]) if "search_space" in blob else SearchSpace(),
        hpo=_build(HpoSettings, hpo_blob, f"{path}:hpo"),
        ablation=_build(AblationFlags, blob.get("ablation", {}), f"{path}:ablation"),
        retrain_period_days=int(blob.get("retrain_period_days", 0)),
        synth=None if synth_blob is None else _build(SynthConfig, synth_blob, f"{path}:synth"),
    )


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    try:
        blob = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_json(blob, str(path))


def save_config(path: str | Path, cfg: PipelineConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True), encoding="utf-8")


def config_hash(cfg: PipelineConfig) -> str:
    canonical = json.dumps(cfg.to_json(), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
