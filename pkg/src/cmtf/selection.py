"""Feature selection: correlation screen, grouped sparse regression, stability.

The stack runs in three stages on the training range of a frame:

1. drop columns whose mean absolute correlation with the other columns is
   too high (redundancy screen),
2. expand the survivors into trailing lagged rows against next-day close
   targets and fit a multi-task group lasso whose groups are (feature, lag)
   rows spanning all target stocks,
3. repeat the fit over contiguous chronological folds and keep features
   that stay active in a large enough fraction of folds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoding import AlignedFrame
from .errors import ConfigError, ContractError, DataError, NumericError, WindowError


# ---------------------------------------------------------------------------
# Correlation screen
# ---------------------------------------------------------------------------


def correlation_filter(values: np.ndarray, tau: float | None = None):
    """Keep columns whose mean |corr| against the others is strictly below tau.

    Zero-variance columns correlate with nothing, so their coefficient is
    defined as 0 and they are always retained. With ``tau=None`` the
    threshold is data-driven: the mean over columns of the per-column mean
    absolute off-diagonal correlation. A single column is always kept.

    Returns ``(keep_mask, mean_abs, tau_used)``.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigError("correlation filter needs a 2-D array with at least 2 rows")
    n_cols = x.shape[1]
    if n_cols == 1:
        return np.array([True]), np.array([0.0]), float(tau) if tau is not None else 0.0

    centered = x - x.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = centered / safe
    corr = unit.T @ unit
    flat = norms == 0.0
    corr[flat, :] = 0.0
    corr[:, flat] = 0.0
    np.fill_diagonal(corr, 0.0)
    np.clip(corr, -1.0, 1.0, out=corr)

    mean_abs = np.abs(corr).sum(axis=1) / (n_cols - 1)
    tau_used = float(mean_abs.mean()) if tau is None else float(tau)
    keep = mean_abs < tau_used
    keep[flat] = True
    return keep, mean_abs, tau_used


# ---------------------------------------------------------------------------
# Lagged design matrix
# ---------------------------------------------------------------------------


def expand_lags(
    values: np.ndarray,
    targets: np.ndarray,
    lag_count: int,
    window_rows: int,
    fit_range: tuple[int, int] | None = None,
):
    """Build the trailing lagged design against next-day targets.

    Row for day t holds, feature-major, ``x_d(t), x_d(t-1), .., x_d(t-L)``;
    the target row is ``targets[t + 1]``. The result covers the last
    ``window_rows`` feasible days inside ``fit_range``, which therefore must
    span at least ``window_rows + lag_count + 1`` days.

    Returns ``(X, Y, t_index)`` where column ``d * (L + 1) + l`` of X is
    feature d at lag l.
    """
    x = np.asarray(values, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if lag_count < 0:
        raise ConfigError(f"lag_count must be >= 0, got {lag_count}")
    if window_rows < 1:
        raise ConfigError(f"window_rows must be >= 1, got {window_rows}")
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != x.shape[0]:
        raise DataError("features and targets must share the time axis")
    lo, hi = (0, x.shape[0]) if fit_range is None else fit_range
    if not (0 <= lo < hi <= x.shape[0]):
        raise ConfigError(f"fit range {(lo, hi)} out of bounds for {x.shape[0]} rows")

    t_last = hi - 2  # last day whose next-day target is still inside the range
    t_first = t_last - window_rows + 1
    if t_first < max(lo, lag_count):
        need = window_rows + lag_count + 1
        raise WindowError(
            f"range of {hi - lo} days is too short for {window_rows} lagged rows "
            f"with {lag_count} lags (need at least {need})"
        )
    t_index = np.arange(t_first, t_last + 1)
    n_feats = x.shape[1]
    design = np.empty((window_rows, n_feats * (lag_count + 1)))
    for lag in range(lag_count + 1):
        design[:, lag :: lag_count + 1] = x[t_index - lag]
    return design, y[t_index + 1], t_index


def lag_group_feature(group_index: int, lag_count: int) -> int:
    """Feature index owning a design-matrix group (inverse of the layout above)."""
    return group_index // (lag_count + 1)


# ---------------------------------------------------------------------------
# Multi-task group lasso via proximal gradient descent
# ---------------------------------------------------------------------------


@dataclass
class GroupLassoResult:
    weights: np.ndarray  # (P, N) on the internally standardized scale
    objective: float
    history: list[float]
    n_iter: int
    converged: bool
    alpha_max: float

    @property
    def group_norms(self) -> np.ndarray:
        return np.sqrt((self.weights**2).sum(axis=1))

    @property
    def active_groups(self) -> np.ndarray:
        return np.where(self.group_norms > 0.0)[0]


def _standardize_design(x: np.ndarray):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    safe = np.where(std > 0.0, std, 1.0)
    return (x - mean) / safe


def _standardize_targets(y: np.ndarray):
    # per-task scaling keeps alpha comparable across target scales; a flat
    # task is left centered (std treated as 1)
    centered = y - y.mean(axis=0)
    std = centered.std(axis=0)
    return centered / np.where(std > 0.0, std, 1.0)


def group_lasso_objective(x: np.ndarray, y: np.ndarray, w: np.ndarray, alpha: float) -> float:
    resid = y - x @ w
    penalty = float(np.sqrt((w**2).sum(axis=1)).sum())
    return float((resid**2).sum() / (2 * x.shape[0]) + alpha * penalty)


def _stationarity_gap(grad: np.ndarray, w: np.ndarray, alpha: float) -> float:
    """Worst-group violation of the subgradient optimality condition."""
    norms = np.sqrt((w**2).sum(axis=1))
    active = norms > 0.0
    gap = 0.0
    if active.any():
        resid = grad[active] + alpha * w[active] / norms[active, None]
        gap = float(np.sqrt((resid**2).sum(axis=1)).max())
    if (~active).any():
        slack = float(np.sqrt((grad[~active] ** 2).sum(axis=1)).max()) - alpha
        gap = max(gap, slack)
    return max(0.0, gap)


def _block_soft_threshold(v: np.ndarray, amount: float) -> np.ndarray:
    norms = np.sqrt((v**2).sum(axis=1))
    shrink = np.maximum(0.0, 1.0 - amount / np.where(norms > 0.0, norms, 1.0))
    shrink[norms == 0.0] = 0.0
    return v * shrink[:, None]


def group_lasso_fit(
    x: np.ndarray,
    y: np.ndarray,
    alpha: float,
    max_iter: int = 20000,
    tol: float = 1e-5,
) -> GroupLassoResult:
    """Minimize ||Y - XW||^2 / (2T) + alpha * sum_p ||W_p||_2 over rows W_p.

    The design is standardized and the targets centered and scaled per task
    internally, which makes alpha a correlation-scale quantity independent
    of the units of X and Y; the returned weights live on that scale and
    selection only consumes their support.

    Proximal gradient with the fixed step 1/L, L the largest eigenvalue of
    X'X / T, plus momentum that restarts whenever it would raise the
    objective, so the recorded objective never increases. The restart
    matters: without momentum the solver cannot push the stationarity gap
    down on nearly collinear designs (open/high/low/close of one ticker)
    in any reasonable iteration budget. Convergence requires both a
    relative objective decrease below ``tol`` and a worst-group
    stationarity gap below ``10 * tol``; the gap condition is what makes
    the returned support trustworthy, since a flat objective alone says
    nothing about which groups are active. Failing both within ``max_iter``
    raises, as selection built on an unconverged fit would be noise.
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    if tol <= 0:
        raise ConfigError(f"tol must be > 0, got {tol}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DataError(f"incompatible shapes {x.shape} and {y.shape}")
    n_rows, n_groups = x.shape
    if n_rows < 2:
        raise DataError("need at least 2 rows to fit")

    xs = _standardize_design(x)
    ys = _standardize_targets(y)
    w = np.zeros((n_groups, y.shape[1]))

    sigma_max = float(np.linalg.svd(xs, compute_uv=False)[0]) if xs.any() else 0.0
    alpha_max = float(np.sqrt(((xs.T @ ys) ** 2).sum(axis=1)).max() / n_rows) if n_groups else 0.0
    if sigma_max == 0.0:
        return GroupLassoResult(w, group_lasso_objective(xs, ys, w, alpha), [], 0, True, alpha_max)
    step = n_rows / sigma_max**2

    history: list[float] = []
    obj = group_lasso_objective(xs, ys, w, alpha)
    z = w.copy()  # extrapolation point
    momentum = 1.0
    gap = np.inf
    converged = False
    n_iter = 0
    for it in range(1, max_iter + 1):
        n_iter = it
        w_new = _block_soft_threshold(z - step * (xs.T @ (xs @ z - ys) / n_rows), step * alpha)
        obj_new = group_lasso_objective(xs, ys, w_new, alpha)
        if obj_new > obj:
            # momentum overshot: restart with a plain step from the last
            # iterate, which cannot increase the objective
            z = w
            momentum = 1.0
            w_new = _block_soft_threshold(w - step * (xs.T @ (xs @ w - ys) / n_rows), step * alpha)
            obj_new = group_lasso_objective(xs, ys, w_new, alpha)
            if obj_new > obj + 1e-9 * max(1.0, abs(obj)):
                raise NumericError(f"objective increased from {obj} to {obj_new} at iteration {it}")
            obj_new = min(obj_new, obj)
        history.append(obj_new)
        rel_decrease = (obj - obj_new) / max(1.0, abs(obj))

        grad_new = xs.T @ (xs @ w_new - ys) / n_rows
        gap = _stationarity_gap(grad_new, w_new, alpha)
        momentum_new = (1.0 + (1.0 + 4.0 * momentum**2) ** 0.5) / 2.0
        z = w_new + ((momentum - 1.0) / momentum_new) * (w_new - w)
        w, momentum, obj = w_new, momentum_new, obj_new
        if rel_decrease < tol and gap < 10.0 * tol:
            converged = True
            break
    if not converged:
        raise NumericError(
            f"group lasso did not converge in {max_iter} iterations "
            f"(last objective {obj}, stationarity gap {gap})"
        )
    return GroupLassoResult(w, obj, history, n_iter, True, alpha_max)


def kkt_violation(x: np.ndarray, y: np.ndarray, w: np.ndarray, alpha: float) -> float:
    """Max stationarity violation of the (standardized) group lasso problem."""
    xs = _standardize_design(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    ys = _standardize_targets(y)
    grad = xs.T @ (xs @ w - ys) / xs.shape[0]
    return _stationarity_gap(grad, np.asarray(w, dtype=np.float64), alpha)


# ---------------------------------------------------------------------------
# Stability selection across chronological folds
# ---------------------------------------------------------------------------


@dataclass
class SelectionConfig:
    alpha: float = 0.05
    tau_corr: float | None = None
    n_folds: int = 5
    survival_threshold: float = 0.8
    lag_count: int = 5
    window_rows: int = 90
    max_iter: int = 20000
    tol: float = 1e-5

    def __post_init__(self):
        if self.n_folds < 1:
            raise ConfigError(f"n_folds must be >= 1, got {self.n_folds}")
        if not (0.0 < self.survival_threshold <= 1.0):
            raise ConfigError(f"survival_threshold must lie in (0, 1], got {self.survival_threshold}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.lag_count < 0:
            raise ConfigError(f"lag_count must be >= 0, got {self.lag_count}")
        if self.window_rows < self.n_folds:
            raise ConfigError("window_rows must provide at least one row per fold")


@dataclass
class SelectionResult:
    selected: list[str]
    survival: dict[str, float]
    tau_corr: float
    corr_kept: list[str]
    corr_mean_abs: dict[str, float]
    fold_active: list[list[str]]
    alpha: float
    lag_count: int
    window_rows: int

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "selected": list(self.selected),
            "survival": dict(self.survival),
            "tau_corr": self.tau_corr,
            "corr_kept": list(self.corr_kept),
            "corr_mean_abs": dict(self.corr_mean_abs),
            "fold_active": [list(f) for f in self.fold_active],
            "alpha": self.alpha,
            "lag_count": self.lag_count,
            "window_rows": self.window_rows,
        }

    @classmethod
    def from_json(cls, blob: dict) -> "SelectionResult":
        return cls(
            list(blob["selected"]),
            {k: float(v) for k, v in blob["survival"].items()},
            float(blob["tau_corr"]),
            list(blob["corr_kept"]),
            {k: float(v) for k, v in blob["corr_mean_abs"].items()},
            [list(f) for f in blob["fold_active"]],
            float(blob["alpha"]),
            int(blob["lag_count"]),
            int(blob["window_rows"]),
        )


def _fold_slices(n_rows: int, n_folds: int) -> list[tuple[int, int]]:
    """Contiguous chronological folds; earlier folds absorb the remainder."""
    base, extra = divmod(n_rows, n_folds)
    out = []
    start = 0
    for k in range(n_folds):
        size = base + (1 if k < extra else 0)
        out.append((start, start + size))
        start += size
    return out


def stability_select(
    frame: AlignedFrame,
    cfg: SelectionConfig,
    fit_range: tuple[int, int],
    target_columns: list[str] | None = None,
) -> SelectionResult:
    """Run the full screen + grouped-sparsity + fold-stability stack.

    Targets default to every ``h:<ticker>:close`` column in the frame. The
    correlation screen and all fits see only rows inside ``fit_range``.
    """
    lo, hi = fit_range
    if not (0 <= lo < hi <= frame.n_days):
        raise ConfigError(f"fit range {fit_range} out of bounds for {frame.n_days} days")
    if target_columns is None:
        target_columns = [c for c in frame.columns if c.startswith("h:") and c.endswith(":close")]
    if not target_columns:
        raise DataError("no target close columns available for selection")
    targets = np.column_stack([frame.column(c) for c in target_columns])

    keep, mean_abs, tau_used = correlation_filter(frame.values[lo:hi], cfg.tau_corr)
    corr_kept = [c for c, k in zip(frame.columns, keep) if k]
    corr_mean_abs = {c: float(v) for c, v in zip(frame.columns, mean_abs)}
    if not corr_kept:
        return SelectionResult([], {}, tau_used, [], corr_mean_abs, [], cfg.alpha, cfg.lag_count, cfg.window_rows)

    sub = frame.select_columns(corr_kept)
    design, y, _ = expand_lags(
        sub.values, targets[:, :], cfg.lag_count, cfg.window_rows, fit_range=(lo, hi)
    )

    fold_active: list[list[str]] = []
    counts = {c: 0 for c in corr_kept}
    for a, b in _fold_slices(design.shape[0], cfg.n_folds):
        if b - a < 2:
            raise WindowError(
                f"fold of {b - a} rows is too small; lower n_folds or raise window_rows"
            )
        fit = group_lasso_fit(design[a:b], y[a:b], cfg.alpha, cfg.max_iter, cfg.tol)
        active_features = sorted(
            {corr_kept[lag_group_feature(g, cfg.lag_count)] for g in fit.active_groups}
        )
        fold_active.append(active_features)
        for name in active_features:
            counts[name] += 1

    survival = {c: counts[c] / cfg.n_folds for c in corr_kept}
    selected = [c for c in corr_kept if survival[c] >= cfg.survival_threshold]
    return SelectionResult(
        selected,
        survival,
        tau_used,
        corr_kept,
        corr_mean_abs,
        fold_active,
        cfg.alpha,
        cfg.lag_count,
        cfg.window_rows,
    )


# ---------------------------------------------------------------------------
# Importance ledger for walk-forward retraining
# ---------------------------------------------------------------------------


@dataclass
class ImportanceLedger:
    """Counts, per feature, how many retraining periods selected it."""

    counts: dict[str, int] = field(default_factory=dict)
    periods: list[int] = field(default_factory=list)

    def record(self, period_index: int, selected: list[str]) -> None:
        if self.periods and period_index <= self.periods[-1]:
            raise ContractError(
                f"period {period_index} arrived after period {self.periods[-1]}; "
                "ledger entries must be chronological"
            )
        self.periods.append(period_index)
        for name in selected:
            self.counts[name] = self.counts.get(name, 0) + 1

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    def frequencies(self) -> dict[str, float]:
        if not self.periods:
            return {}
        return {k: v / len(self.periods) for k, v in sorted(self.counts.items())}

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "periods": list(self.periods),
            "counts": dict(sorted(self.counts.items())),
        }

    @classmethod
    def from_json(cls, blob: dict) -> "ImportanceLedger":
        return cls(dict(blob["counts"]), list(blob["periods"]))
