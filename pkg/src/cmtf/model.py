"""Transformer-encoder direction model built on the in-package autodiff.

One sample is a lookback window of daily features; the network projects it
into the model width, adds sinusoidal position codes, runs post-norm
encoder layers (multi-head attention, then a ReLU feed-forward block, each
followed by add-and-normalise), and maps the final time step through a
linear head with one output per target stock. The same body serves two
tasks: direction classification (logits, trained with binary cross-entropy)
and next-day price regression (trained with mean squared error on
internally standardized targets).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, NumericError, TrainingError, WindowError
from .optim import AdamState, adam_step

TASKS = ("classification", "regression")


@dataclass
class TransformerConfig:
    n_features: int
    seq_len: int
    n_outputs: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ffn_dim: int = 256
    task: str = "classification"

    def __post_init__(self):
        for name in ("n_features", "seq_len", "n_outputs", "d_model", "n_heads", "n_layers", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_json(self) -> dict:
        return {
            "n_features": self.n_features,
            "seq_len": self.seq_len,
            "n_outputs": self.n_outputs,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "ffn_dim": self.ffn_dim,
            "task": self.task,
        }

    @classmethod
    def from_json(cls, blob: dict) -> "TransformerConfig":
        return cls(
            n_features=int(blob["n_features"]),
            seq_len=int(blob["seq_len"]),
            n_outputs=int(blob["n_outputs"]),
            d_model=int(blob["d_model"]),
            n_heads=int(blob["n_heads"]),
            n_layers=int(blob["n_layers"]),
            ffn_dim=int(blob["ffn_dim"]),
            task=str(blob["task"]),
        )


class ModelParams:
    """Named, ordered trainable tensors for one model instance."""

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator | None = None,
                 values: dict[str, np.ndarray] | None = None):
        self.cfg = cfg
        self._named: dict[str, Tensor] = {}

        def put(name: str, arr: np.ndarray) -> None:
            self._named[name] = Tensor(arr, requires_grad=True, name=name)

        def from_values(name: str, shape: tuple[int, ...]) -> None:
            # tolerate a missing key here; the mismatch check below turns it
            # into a DataError naming every absent parameter at once
            arr = values.get(name)
            put(name, np.zeros(shape) if arr is None else np.asarray(arr, dtype=np.float64))

        def init(name: str, fan_in: int, fan_out: int, shape=None) -> None:
            if values is not None:
                from_values(name, shape or (fan_in, fan_out))
            else:
                put(name, ad.xavier_uniform(rng, fan_in, fan_out, shape))

        def init_const(name: str, shape: tuple[int, ...], fill: float) -> None:
            if values is not None:
                from_values(name, shape)
            else:
                put(name, np.full(shape, fill))

        if values is None and rng is None:
            raise ConfigError("ModelParams needs either an rng or explicit values")

        d, dk, f = cfg.d_model, cfg.d_head, cfg.ffn_dim
        init("w_in", cfg.n_features, d)
        init_const("b_in", (d,), 0.0)
        for i in range(cfg.n_layers):
            for h in range(cfg.n_heads):
                for w in ("wq", "wk", "wv"):
                    init(f"layer{i}.head{h}.{w}", d, dk, (d, dk))
            init(f"layer{i}.wo", d, d)
            init_const(f"layer{i}.ln1.gain", (d,), 1.0)
            init_const(f"layer{i}.ln1.bias", (d,), 0.0)
            init(f"layer{i}.ffn.w1", d, f)
            init_const(f"layer{i}.ffn.b1", (f,), 0.0)
            init(f"layer{i}.ffn.w2", f, d)
            init_const(f"layer{i}.ffn.b2", (d,), 0.0)
            init_const(f"layer{i}.ln2.gain", (d,), 1.0)
            init_const(f"layer{i}.ln2.bias", (d,), 0.0)
        init("head.w", d, cfg.n_outputs)
        init_const("head.b", (cfg.n_outputs,), 0.0)

        if values is not None:
            missing = set(self._named) - set(values)
            extra = set(values) - set(self._named)
            if missing or extra:
                raise DataError(f"checkpoint params mismatch: missing {sorted(missing)}, extra {sorted(extra)}")

    def __getitem__(self, name: str) -> Tensor:
        return self._named[name]

    def tensors(self) -> list[Tensor]:
        return list(self._named.values())

    def named(self) -> dict[str, Tensor]:
        return dict(self._named)

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self._named.values())


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal position codes: sin on even dims, cos on odd, shared rates."""
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    dims = np.arange(d_model, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * np.floor(dims / 2.0) / d_model)
    pe = np.where(np.arange(d_model) % 2 == 0, np.sin(angles), np.cos(angles))
    return pe


def encoder_forward(params: ModelParams, x: Tensor) -> Tensor:
    """Run the full encoder; returns raw head outputs of shape (batch, n_outputs)."""
    cfg = params.cfg
    if x.data.ndim != 3 or x.data.shape[1] != cfg.seq_len or x.data.shape[2] != cfg.n_features:
        raise DataError(
            f"expected input of shape (batch, {cfg.seq_len}, {cfg.n_features}), got {x.shape}"
        )
    scale = 1.0 / math.sqrt(cfg.d_head)
    h = ad.add(ad.matmul(x, params["w_in"]), params["b_in"])
    h = ad.add(h, Tensor(positional_encoding(cfg.seq_len, cfg.d_model)))
    for i in range(cfg.n_layers):
        heads = []
        for j in range(cfg.n_heads):
            q = ad.matmul(h, params[f"layer{i}.head{j}.wq"])
            k = ad.matmul(h, params[f"layer{i}.head{j}.wk"])
            v = ad.matmul(h, params[f"layer{i}.head{j}.wv"])
            scores = ad.mul(ad.matmul(q, k, transpose_b=True), scale)
            heads.append(ad.matmul(ad.softmax(scores), v))
        attended = ad.matmul(ad.concat(heads, axis=-1), params[f"layer{i}.wo"])
        h = ad.layer_norm(ad.add(h, attended), params[f"layer{i}.ln1.gain"], params[f"layer{i}.ln1.bias"])
        inner = ad.relu(ad.add(ad.matmul(h, params[f"layer{i}.ffn.w1"]), params[f"layer{i}.ffn.b1"]))
        ffn = ad.add(ad.matmul(inner, params[f"layer{i}.ffn.w2"]), params[f"layer{i}.ffn.b2"])
        h = ad.layer_norm(ad.add(h, ffn), params[f"layer{i}.ln2.gain"], params[f"layer{i}.ln2.bias"])
    last = ad.take(h, (slice(None), -1, slice(None)))
    return ad.add(ad.matmul(last, params["head.w"]), params["head.b"])


# ---------------------------------------------------------------------------
# Targets and windows
# ---------------------------------------------------------------------------


def make_labels(closes: np.ndarray) -> tuple[np.ndarray, int]:
    """Binary next-day direction labels: 1 iff tomorrow's close is strictly higher.

    Ties count as 0; the number of exact ties is returned as a diagnostic.
    """
    c = np.asarray(closes, dtype=np.float64)
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] < 2:
        raise DataError("need at least 2 days of closes to form direction labels")
    up = (c[1:] > c[:-1]).astype(np.float64)
    ties = int((c[1:] == c[:-1]).sum())
    return up, ties


def window_days(seq_len: int, day_range: tuple[int, int], n_days: int) -> np.ndarray:
    """Prediction days t inside ``day_range`` with a full lookback window and
    a next-day target: seq_len - 1 <= t <= hi - 2."""
    lo, hi = day_range
    if not (0 <= lo < hi <= n_days):
        raise ConfigError(f"day range {day_range} out of bounds for {n_days} days")
    t = np.arange(max(lo, seq_len - 1), hi - 1)
    if t.size == 0:
        raise WindowError(
            f"day range {day_range} yields no usable windows for lookback {seq_len}"
        )
    return t


def build_windows(features: np.ndarray, seq_len: int, days: np.ndarray) -> np.ndarray:
    """Stack lookback windows ending at each day t: rows t-seq_len+1 .. t."""
    x = np.asarray(features, dtype=np.float64)
    days = np.asarray(days, dtype=np.int64)
    if days.size and (days.min() < seq_len - 1 or days.max() >= x.shape[0]):
        raise DataError("window days must allow a full lookback inside the feature matrix")
    offsets = np.arange(-(seq_len - 1), 1)
    return x[days[:, None] + offsets[None, :]]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainSettings:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class TrainedModel:
    config: TransformerConfig
    params: ModelParams
    target_mean: np.ndarray
    target_std: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    seed: int = 0


@dataclass
class TrainResult:
    model: TrainedModel
    history: list[dict]
    tie_count: int
    n_train_windows: int
    n_val_windows: int


def _forward_loss(params: ModelParams, x: np.ndarray, y: np.ndarray) -> Tensor:
    out = encoder_forward(params, Tensor(x))
    target = Tensor(y)
    if params.cfg.task == "classification":
        return ad.binary_cross_entropy_with_logits(out, target)
    return ad.mean_squared_error(out, target)


def _batched_loss_value(params: ModelParams, x: np.ndarray, y: np.ndarray, batch_size: int) -> float:
    total = 0.0
    for start in range(0, x.shape[0], batch_size):
        xb, yb = x[start : start + batch_size], y[start : start + batch_size]
        total += float(_forward_loss(params, xb, yb).data) * xb.shape[0]
    return total / x.shape[0]


def train_model(
    features: np.ndarray,
    closes: np.ndarray,
    cfg: TransformerConfig,
    settings: TrainSettings,
    fit_range: tuple[int, int],
    val_range: tuple[int, int] | None = None,
    epoch_hook=None,
    feature_names: list[str] | None = None,
) -> TrainResult:
    """Fit the encoder on lookback windows drawn from ``fit_range``.

    ``closes`` drives the targets: strict-increase labels for
    classification, standardized next-day prices for regression. After each
    epoch ``epoch_hook(epoch, reported)`` is invoked with the validation
    loss (train loss when no validation range is given); whatever it raises
    propagates, which is how a tuner aborts a hopeless trial mid-run.
    """
    x = np.asarray(features, dtype=np.float64)
    c = np.asarray(closes, dtype=np.float64)
    if c.ndim == 1:
        c = c[:, None]
    if x.shape[0] != c.shape[0]:
        raise DataError("features and closes must share the time axis")
    if c.shape[1] != cfg.n_outputs:
        raise ConfigError(f"model has {cfg.n_outputs} outputs but {c.shape[1]} target stocks")
    if x.shape[1] != cfg.n_features:
        raise ConfigError(f"model expects {cfg.n_features} features, matrix has {x.shape[1]}")

    labels, ties = make_labels(c)
    t_fit = window_days(cfg.seq_len, fit_range, x.shape[0])
    x_fit = build_windows(x, cfg.seq_len, t_fit)
    if cfg.task == "classification":
        y_fit = labels[t_fit]
        target_mean = np.zeros(cfg.n_outputs)
        target_std = np.ones(cfg.n_outputs)
    else:
        raw = c[t_fit + 1]
        target_mean = raw.mean(axis=0)
        target_std = raw.std(axis=0)
        target_std = np.where(target_std > 0.0, target_std, 1.0)
        y_fit = (raw - target_mean) / target_std

    x_val = y_val = None
    if val_range is not None:
        t_val = window_days(cfg.seq_len, val_range, x.shape[0])
        x_val = build_windows(x, cfg.seq_len, t_val)
        if cfg.task == "classification":
            y_val = labels[t_val]
        else:
            y_val = (c[t_val + 1] - target_mean) / target_std

    rng = np.random.default_rng(settings.seed)
    params = ModelParams(cfg, rng=rng)
    tensors = params.tensors()
    opt = AdamState(learning_rate=settings.learning_rate)

    history: list[dict] = []
    n = x_fit.shape[0]
    for epoch in range(settings.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        try:
            for start in range(0, n, settings.batch_size):
                idx = order[start : start + settings.batch_size]
                ad.zero_grads(tensors)
                loss = _forward_loss(params, x_fit[idx], y_fit[idx])
                ad.backward(loss)
                grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
                adam_step(tensors, grads, opt)
                epoch_loss += float(loss.data) * idx.size
            train_loss = epoch_loss / n
            val_loss = (
                _batched_loss_value(params, x_val, y_val, settings.batch_size)
                if x_val is not None
                else None
            )
        except TrainingError:
            raise
        except NumericError as exc:
            raise TrainingError(f"training diverged at epoch {epoch}: {exc}") from exc
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if epoch_hook is not None:
            epoch_hook(epoch, val_loss if val_loss is not None else train_loss)

    model = TrainedModel(cfg, params, target_mean, target_std, feature_names or [], settings.seed)
    return TrainResult(model, history, ties, x_fit.shape[0], 0 if x_val is None else x_val.shape[0])


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def predict(model: TrainedModel, features: np.ndarray, days: np.ndarray,
            batch_size: int = 256) -> np.ndarray:
    """Model outputs for windows ending at ``days``.

    Classification yields up-probabilities; regression yields prices on the
    original scale. Shape is (len(days), n_outputs).
    """
    x = build_windows(np.asarray(features, dtype=np.float64), model.config.seq_len, days)
    outs = []
    for start in range(0, x.shape[0], batch_size):
        out = encoder_forward(model.params, Tensor(x[start : start + batch_size]))
        outs.append(out.data)
    raw = np.concatenate(outs, axis=0) if outs else np.zeros((0, model.config.n_outputs))
    if model.config.task == "classification":
        return ad.sigmoid_array(raw)
    return raw * model.target_std + model.target_mean


def predicted_direction(model_output: np.ndarray, prev_close: np.ndarray | None, task: str) -> np.ndarray:
    """Map raw predictions to 0/1 direction calls.

    Classification: up iff probability exceeds one half. Regression: up iff
    the predicted price strictly exceeds today's close (needs prev_close).
    """
    if task == "classification":
        return (np.asarray(model_output) > 0.5).astype(np.int64)
    if prev_close is None:
        raise ConfigError("regression direction needs the previous close")
    return (np.asarray(model_output) > np.asarray(prev_close)).astype(np.int64)


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_model(path: str | Path, model: TrainedModel) -> None:
    blob = {
        "schema_version": 1,
        "kind": "transformer-encoder",
        "seed": model.seed,
        "config": model.config.to_json(),
        "target_mean": model.target_mean.tolist(),
        "target_std": model.target_std.tolist(),
        "feature_names": list(model.feature_names),
        "params": {k: v.data.tolist() for k, v in model.params.named().items()},
    }
    Path(path).write_text(json.dumps(blob, sort_keys=True), encoding="utf-8")


def load_model(path: str | Path) -> TrainedModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    blob = json.loads(path.read_text(encoding="utf-8"))
    if blob.get("kind") != "transformer-encoder":
        raise DataError(f"{path}: not a model checkpoint")
    cfg = TransformerConfig.from_json(blob["config"])
    params = ModelParams(cfg, values={k: np.asarray(v) for k, v in blob["params"].items()})
    return TrainedModel(
        cfg,
        params,
        np.asarray(blob["target_mean"], dtype=np.float64),
        np.asarray(blob["target_std"], dtype=np.float64),
        list(blob.get("feature_names", [])),
        int(blob.get("seed", 0)),
    )
