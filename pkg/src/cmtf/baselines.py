"""Reference predictors the learned model must beat (or fail honestly against).

The zero-change rule is the martingale baseline: tomorrow's price is
today's, and tomorrow's direction call repeats the move that just
happened. The linear baseline is ordinary least squares with an intercept
on the same feature rows the model sees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, NumericError, WindowError


def zero_change_price(closes: np.ndarray, days: np.ndarray) -> np.ndarray:
    """Predict tomorrow's close as today's: rows are closes[t] for t in days."""
    c = np.asarray(closes, dtype=np.float64)
    if c.ndim == 1:
        c = c[:, None]
    days = np.asarray(days, dtype=np.int64)
    if days.size == 0:
        raise DataError("no days to predict")
    if days.min() < 0 or days.max() >= c.shape[0]:
        raise DimensionError("prediction days fall outside the close series")
    return c[days]


def zero_change_direction(closes: np.ndarray, days: np.ndarray) -> np.ndarray:
    """Predict tomorrow's direction as the one realized today (t vs t-1).

    A flat day counts as down, mirroring the strict-increase labels. Needs
    every t >= 1.
    """
    c = np.asarray(closes, dtype=np.float64)
    if c.ndim == 1:
        c = c[:, None]
    days = np.asarray(days, dtype=np.int64)
    if days.size == 0:
        raise DataError("no days to predict")
    if days.min() < 1:
        raise WindowError("direction carry-forward needs a previous day (t >= 1)")
    if days.max() >= c.shape[0]:
        raise DimensionError("prediction days fall outside the close series")
    return (c[days] > c[days - 1]).astype(np.int64)


@dataclass
class LinearModel:
    coef: np.ndarray  # (n_features, n_targets)
    intercept: np.ndarray  # (n_targets,)
    ridge_used: bool = False


def linear_fit(x: np.ndarray, y: np.ndarray) -> LinearModel:
    """Least squares with intercept via the normal equations.

    A singular Gram matrix falls back to a tiny ridge (1e-8 on the
    diagonal); if even that fails the problem is hopeless and an error is
    raised.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"incompatible shapes {x.shape} and {y.shape}")
    if x.shape[0] < 1:
        raise DataError("need at least one row to fit")
    xa = np.column_stack([x, np.ones(x.shape[0])])
    gram = xa.T @ xa
    rhs = xa.T @ y
    ridge_used = False
    try:
        beta = np.linalg.solve(gram, rhs)
        if not np.all(np.isfinite(beta)):
            raise np.linalg.LinAlgError("non-finite solution")
    except np.linalg.LinAlgError:
        ridge_used = True
        try:
            beta = np.linalg.solve(gram + 1e-8 * np.eye(gram.shape[0]), rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"linear baseline fit failed even with ridge: {exc}") from exc
        if not np.all(np.isfinite(beta)):
            raise NumericError("linear baseline produced non-finite coefficients")
    return LinearModel(beta[:-1], beta[-1], ridge_used)


def linear_predict(model: LinearModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.coef.shape[0]:
        raise DimensionError(
            f"feature matrix {x.shape} does not match fit with {model.coef.shape[0]} features"
        )
    return x @ model.coef + model.intercept
