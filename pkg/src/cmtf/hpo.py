"""Hyperparameter search over finite grids with density-ratio sampling.

Trials minimize a scalar objective. After a uniform startup phase the
sampler splits finished trials at a quantile into good and bad sets, models
each dimension with add-one-smoothed categorical densities, draws
candidates from the good density and keeps the one with the highest
good-to-bad density ratio. A structural constraint (model width divisible
by head count) is enforced by rejection.

Running trials may report intermediate values; a pruner can then abort
them early. The default rule prunes when the ratio of consecutive reported
values exceeds gamma ** (1 / eta), i.e. when improvement stalls; a
rung-based successive-halving rule and a no-op are available behind the
same interface.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CmtfError, ConfigError, ContractError, DataError, PipelineError

log = logging.getLogger("cmtf.hpo")

DEFAULT_DIMENSIONS: dict[str, list] = {
    "d_model": [32, 64, 128, 256, 512, 1024],
    "n_heads": [2, 4, 8, 16],
    "n_layers": [1, 2, 4, 8],
    "ffn_dim": [256, 512, 1024, 2048, 4096],
    "learning_rate": [1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2],
    "batch_size": [32, 64, 128],
    "epochs": [10, 20, 50, 100],
}


class TrialPruned(CmtfError):
    """Raised inside an objective when the pruner aborts the trial."""

    exit_code = 1


@dataclass
class SearchSpace:
    """Finite candidate lists per dimension, with the divisibility constraint."""

    dimensions: dict[str, list] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_DIMENSIONS.items()})

    def __post_init__(self):
        if not self.dimensions:
            raise ConfigError("search space needs at least one dimension")
        for name, values in self.dimensions.items():
            if not values:
                raise ConfigError(f"search dimension {name!r} has no candidate values")
            if len(set(map(repr, values))) != len(values):
                raise ConfigError(f"search dimension {name!r} has duplicate values")

    def valid(self, point: dict) -> bool:
        if "d_model" in point and "n_heads" in point:
            return point["d_model"] % point["n_heads"] == 0
        return True

    def n_points(self) -> int:
        total = 1
        for values in self.dimensions.values():
            total *= len(values)
        return total

    def to_json(self) -> dict:
        return {k: list(v) for k, v in self.dimensions.items()}

    @classmethod
    def from_json(cls, blob: dict) -> "SearchSpace":
        return cls({k: list(v) for k, v in blob.items()})


@dataclass
class TrialRecord:
    number: int
    params: dict
    state: str = "running"  # running | complete | pruned | failed
    value: float | None = None
    intermediates: list[float] = field(default_factory=list)
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "number": self.number,
            "params": dict(self.params),
            "state": self.state,
            "value": self.value,
            "intermediates": list(self.intermediates),
            "error": self.error,
        }

    @classmethod
    def from_json(cls, blob: dict) -> "TrialRecord":
        return cls(
            int(blob["number"]),
            dict(blob["params"]),
            str(blob["state"]),
            None if blob["value"] is None else float(blob["value"]),
            [float(v) for v in blob["intermediates"]],
            blob.get("error"),
        )


# ---------------------------------------------------------------------------
# Sampler
# ---------------------------------------------------------------------------


@dataclass
class SamplerConfig:
    n_startup: int = 10
    gamma_split: float = 0.25
    n_candidates: int = 24

    def __post_init__(self):
        if self.n_startup < 1:
            raise ConfigError(f"n_startup must be >= 1, got {self.n_startup}")
        if not (0.0 < self.gamma_split < 1.0):
            raise ConfigError(f"gamma_split must lie in (0, 1), got {self.gamma_split}")
        if self.n_candidates < 1:
            raise ConfigError(f"n_candidates must be >= 1, got {self.n_candidates}")


def _uniform_point(space: SearchSpace, rng: np.random.Generator) -> dict:
    for _ in range(1000):
        point = {name: values[rng.integers(len(values))] for name, values in space.dimensions.items()}
        if space.valid(point):
            return point
    raise ConfigError("could not draw a point satisfying the search-space constraint")


def _smoothed_density(values: list, observed: list) -> np.ndarray:
    """Add-one-smoothed categorical probabilities over the candidate list."""
    counts = np.ones(len(values))
    index = {repr(v): i for i, v in enumerate(values)}
    for obs in observed:
        counts[index[repr(obs)]] += 1
    return counts / counts.sum()


def suggest(
    space: SearchSpace,
    trials: list[TrialRecord],
    rng: np.random.Generator,
    cfg: SamplerConfig | None = None,
) -> dict:
    """Propose the next point to evaluate, minimizing the objective."""
    cfg = cfg or SamplerConfig()
    done = [t for t in trials if t.state == "complete" and t.value is not None and math.isfinite(t.value)]
    if len(done) < cfg.n_startup:
        return _uniform_point(space, rng)

    done = sorted(done, key=lambda t: (t.value, t.number))
    n_good = max(1, math.ceil(cfg.gamma_split * len(done)))
    good, bad = done[:n_good], done[n_good:]
    if not bad:
        return _uniform_point(space, rng)

    names = list(space.dimensions)
    dens_good = {}
    dens_bad = {}
    for name in names:
        values = space.dimensions[name]
        dens_good[name] = _smoothed_density(values, [t.params[name] for t in good])
        dens_bad[name] = _smoothed_density(values, [t.params[name] for t in bad])

    best_point = None
    best_ratio = -np.inf
    drawn = 0
    attempts = 0
    while drawn < cfg.n_candidates and attempts < 1000 * cfg.n_candidates:
        attempts += 1
        point = {}
        log_ratio = 0.0
        for name in names:
            values = space.dimensions[name]
            i = rng.choice(len(values), p=dens_good[name])
            point[name] = values[i]
            log_ratio += math.log(dens_good[name][i]) - math.log(dens_bad[name][i])
        if not space.valid(point):
            continue
        drawn += 1
        if log_ratio > best_ratio:
            best_ratio = log_ratio
            best_point = point
    if best_point is None:
        return _uniform_point(space, rng)
    return best_point


# ---------------------------------------------------------------------------
# Pruners
# ---------------------------------------------------------------------------


@dataclass
class PrunerConfig:
    kind: str = "ratio"  # ratio | halving | none
    gamma: float = 0.5
    eta: float = 3.0
    warmup_steps: int = 3
    min_resource: int = 1

    def __post_init__(self):
        if self.kind not in ("ratio", "halving", "none"):
            raise ConfigError(f"unknown pruner kind {self.kind!r}")
        if not (0.0 < self.gamma < 1.0):
            raise ConfigError(f"pruner gamma must lie in (0, 1), got {self.gamma}")
        if self.eta <= 1.0:
            raise ConfigError(f"pruner eta must be > 1, got {self.eta}")
        if self.warmup_steps < 0:
            raise ConfigError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.min_resource < 1:
            raise ConfigError(f"min_resource must be >= 1, got {self.min_resource}")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "gamma": self.gamma,
            "eta": self.eta,
            "warmup_steps": self.warmup_steps,
            "min_resource": self.min_resource,
        }

    @classmethod
    def from_json(cls, blob: dict) -> "PrunerConfig":
        return cls(
            str(blob["kind"]),
            float(blob["gamma"]),
            float(blob["eta"]),
            int(blob["warmup_steps"]),
            int(blob["min_resource"]),
        )


class RatioPruner:
    """Prune when consecutive reported values stop shrinking fast enough.

    With positive loss-like values r, the trial dies once past warmup when
    r_k / r_{k-1} > gamma ** (1 / eta). The ratio only means anything for
    positive finite values, so anything else past warmup also prunes, with
    a logged diagnostic. Note the rule is aggressive by design: a loss
    curve that merely flattens gets cut.
    """

    def __init__(self, cfg: PrunerConfig):
        self.threshold = cfg.gamma ** (1.0 / cfg.eta)
        self.warmup = cfg.warmup_steps

    def should_prune(self, trial: TrialRecord, step: int, value: float) -> bool:
        if step < self.warmup or len(trial.intermediates) < 2:
            return False
        prev = trial.intermediates[-2]
        if not (math.isfinite(prev) and math.isfinite(value)) or prev <= 0.0 or value <= 0.0:
            log.warning(
                "trial %d: unusable values (%r, %r) for the ratio rule at step %d; pruning",
                trial.number, prev, value, step,
            )
            return True
        return value / prev > self.threshold


class HalvingPruner:
    """Rung-based early stopping shared across trials.

    Rungs sit at steps min_resource * eta^j - 1. A trial reaching a rung
    survives only while its value is within the best 1/eta fraction of all
    values recorded at that rung so far (at least two values required).
    """

    def __init__(self, cfg: PrunerConfig):
        self.eta = cfg.eta
        self.min_resource = cfg.min_resource
        self.rungs: dict[int, list[float]] = {}
        self._lock = threading.Lock()

    def _rung_of(self, step: int) -> int | None:
        resource = step + 1
        r = self.min_resource
        j = 0
        while r <= resource:
            if r == resource:
                return j
            r = int(round(r * self.eta))
            j += 1
        return None

    def should_prune(self, trial: TrialRecord, step: int, value: float) -> bool:
        rung = self._rung_of(step)
        if rung is None:
            return False
        with self._lock:
            values = self.rungs.setdefault(rung, [])
            values.append(value)
            if len(values) < 2:
                return False
            cutoff = float(np.quantile(np.asarray(values), 1.0 / self.eta))
        return value > cutoff


class NoPruner:
    def should_prune(self, trial: TrialRecord, step: int, value: float) -> bool:
        return False


def make_pruner(cfg: PrunerConfig):
    if cfg.kind == "ratio":
        return RatioPruner(cfg)
    if cfg.kind == "halving":
        return HalvingPruner(cfg)
    return NoPruner()


# ---------------------------------------------------------------------------
# Study loop
# ---------------------------------------------------------------------------


class Trial:
    """Handle passed to the objective: fixed params plus progress reporting."""

    def __init__(self, record: TrialRecord, pruner):
        self._record = record
        self._pruner = pruner

    @property
    def number(self) -> int:
        return self._record.number

    @property
    def params(self) -> dict:
        return dict(self._record.params)

    def report(self, step: int, value: float) -> None:
        """Record an intermediate value; raises TrialPruned to abort the trial."""
        if step != len(self._record.intermediates):
            raise ContractError(
                f"trial {self.number}: expected report for step "
                f"{len(self._record.intermediates)}, got {step}"
            )
        if not math.isfinite(value):
            # hopeless rather than malformed: stop the trial, keep the study
            raise TrialPruned(f"trial {self.number}: non-finite value at step {step}")
        self._record.intermediates.append(float(value))
        if self._pruner.should_prune(self._record, step, float(value)):
            raise TrialPruned(f"trial {self.number} pruned at step {step}")


@dataclass
class Study:
    space: SearchSpace
    seed: int
    pruner: PrunerConfig
    trials: list[TrialRecord] = field(default_factory=list)

    @property
    def completed(self) -> list[TrialRecord]:
        return [t for t in self.trials if t.state == "complete"]

    @property
    def best_trial(self) -> TrialRecord:
        done = self.completed
        if not done:
            raise PipelineError("study has no completed trials")
        return min(done, key=lambda t: (t.value, t.number))

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "direction": "minimize",
            "seed": self.seed,
            "space": self.space.to_json(),
            "pruner": self.pruner.to_json(),
            "trials": [t.to_json() for t in self.trials],
            "best_number": self.best_trial.number if self.completed else None,
        }

    @classmethod
    def from_json(cls, blob: dict) -> "Study":
        return cls(
            SearchSpace.from_json(blob["space"]),
            int(blob["seed"]),
            PrunerConfig.from_json(blob["pruner"]),
            [TrialRecord.from_json(t) for t in blob["trials"]],
        )


def save_study(path: str | Path, study: Study) -> None:
    Path(path).write_text(json.dumps(study.to_json(), sort_keys=True), encoding="utf-8")


def load_study(path: str | Path) -> Study:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    return Study.from_json(json.loads(path.read_text(encoding="utf-8")))


def tune(
    objective,
    space: SearchSpace,
    n_trials: int,
    seed: int,
    pruner_cfg: PrunerConfig | None = None,
    sampler_cfg: SamplerConfig | None = None,
    parallelism: int = 1,
) -> Study:
    """Run the search; returns the finished study (raises if nothing completed).

    ``objective(trial)`` returns the value to minimize and may raise
    TrialPruned (via ``trial.report``). With ``parallelism=1`` the whole
    study is deterministic for a fixed seed; more workers trade that for
    wall-clock speed.
    """
    if n_trials < 1:
        raise ConfigError(f"n_trials must be >= 1, got {n_trials}")
    if parallelism < 1:
        raise ConfigError(f"parallelism must be >= 1, got {parallelism}")
    pruner_cfg = pruner_cfg or PrunerConfig()
    pruner = make_pruner(pruner_cfg)
    sampler_cfg = sampler_cfg or SamplerConfig()
    study = Study(space, seed, pruner_cfg)
    rng = np.random.default_rng(seed)
    lock = threading.Lock()

    def run_one(_: int) -> None:
        with lock:
            record = TrialRecord(len(study.trials), suggest(space, study.trials, rng, sampler_cfg))
            study.trials.append(record)
        try:
            value = objective(Trial(record, pruner))
        except TrialPruned:
            with lock:
                record.state = "pruned"
            return
        except CmtfError as exc:
            with lock:
                record.state = "failed"
                record.error = str(exc)
            return
        if value is None or not math.isfinite(float(value)):
            with lock:
                record.state = "failed"
                record.error = f"objective returned {value!r}"
            return
        with lock:
            record.value = float(value)
            record.state = "complete"

    if parallelism == 1:
        for i in range(n_trials):
            run_one(i)
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            list(pool.map(run_one, range(n_trials)))

    if not study.completed:
        raise PipelineError(
            f"all {n_trials} trials were pruned or failed; relax the pruning "
            "threshold (lower gamma, raise eta or warmup_steps) or rerun with "
            "the 'none' pruner"
        )
    return study
