"""Fusion of mixed-granularity series onto one daily feature frame.

The frame's time axis is the trading calendar. Column blocks appear in a
fixed modality order: structured prices (``h``), macro indicators (``m``),
news tensors (``n``), report ratings (``r``). Native daily series (prices,
daily macro) are placed on the calendar directly, with any gap days linearly
interpolated; everything slower, plus news events, is forward-filled to the
calendar and then smoothed with a linearly weighted moving average.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    Calendar,
    MarketData,
    NewsTensorSeries,
    RATING_FIELDS,
    format_date,
    parse_date,
)
from .errors import ConfigError, ContractError, DataError

MODALITIES = ("h", "m", "n", "r")


@dataclass
class AlignedFrame:
    """Dense (T, D) feature matrix on a trading calendar, one row per day."""

    calendar: Calendar
    columns: list[str]
    values: np.ndarray
    modality: list[str]
    scaled: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.calendar), len(self.columns)):
            raise DataError(
                f"frame shape {self.values.shape} does not match "
                f"{len(self.calendar)} days x {len(self.columns)} columns"
            )
        if len(self.modality) != len(self.columns):
            raise DataError("one modality tag required per column")
        for m in self.modality:
            if m not in MODALITIES:
                raise DataError(f"unknown modality tag {m!r}")
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise DataError("frame contains non-finite values; impute missing data first")

    @property
    def n_days(self) -> int:
        return len(self.calendar)

    def column_index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise DataError(f"frame has no column {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_index(name)]

    def select_columns(self, names: list[str]) -> "AlignedFrame":
        idx = [self.column_index(n) for n in names]
        return AlignedFrame(
            self.calendar,
            [self.columns[i] for i in idx],
            self.values[:, idx].copy(),
            [self.modality[i] for i in idx],
            scaled=self.scaled,
        )


def close_column(ticker: str) -> str:
    return f"h:{ticker}:close"


# ---------------------------------------------------------------------------
# Alignment primitives
# ---------------------------------------------------------------------------


def forward_fill_daily(dates: np.ndarray, values: np.ndarray, calendar: Calendar) -> np.ndarray:
    """Carry the latest observation at or before each calendar day forward.

    Days before the first observation take the first observed value, so the
    result is always fully populated.
    """
    if dates.size == 0:
        raise DataError("cannot forward-fill an empty series")
    idx = np.searchsorted(dates, calendar.days, side="right") - 1
    np.maximum(idx, 0, out=idx)
    return np.asarray(values, dtype=np.float64)[idx]


def place_linear(dates: np.ndarray, values: np.ndarray, calendar: Calendar) -> np.ndarray:
    """Put a daily series on the calendar, interpolating gap days linearly.

    A ticker that skips a trading day other tickers traded gets the value
    interpolated between its neighboring observations; days outside the
    observed span clamp to the nearest observation.
    """
    if dates.size == 0:
        raise DataError("cannot place an empty series on the calendar")
    return np.interp(
        calendar.days.astype(np.float64),
        dates.astype(np.float64),
        np.asarray(values, dtype=np.float64),
    )


def wma(values: np.ndarray, window: int) -> np.ndarray:
    """Linearly weighted trailing average: weights 1..window, newest heaviest.

    Rows before a full window use the weight prefix 1..(t+1), so the output
    has the same length as the input and a window of 1 is the identity.
    """
    if window < 1:
        raise ConfigError(f"wma window must be >= 1, got {window}")
    v = np.asarray(values, dtype=np.float64)
    one_d = v.ndim == 1
    x = v[:, None] if one_d else v
    if x.ndim != 2:
        raise ConfigError("wma expects a 1-D or 2-D array")
    t_total = x.shape[0]
    out = np.empty_like(x)
    weights = np.arange(1, window + 1, dtype=np.float64)
    for t in range(min(window - 1, t_total)):
        w = weights[: t + 1]
        out[t] = w @ x[: t + 1] / w.sum()
    if t_total >= window:
        sw = np.lib.stride_tricks.sliding_window_view(x, window, axis=0)
        out[window - 1 :] = np.einsum("tdw,w->td", sw, weights) / weights.sum()
    return out[:, 0] if one_d else out


def _news_on_calendar(series: NewsTensorSeries, calendar: Calendar) -> np.ndarray:
    """Place news rows on the trading calendar and hold them between events.

    Rows dated off-calendar (weekends, holidays) attach to the next trading
    day, where the information first becomes actionable. When several rows
    land on one day the binary labels combine with max and the scores with
    their mean. Days between events carry the last event forward; rows
    after the final trading day are dropped.
    """
    t_total = len(calendar)
    pos = np.searchsorted(calendar.days, series.dates, side="left")
    by_day: dict[int, list[int]] = {}
    for i, p in enumerate(pos):
        if p < t_total:
            by_day.setdefault(int(p), []).append(i)
    if not by_day:
        raise DataError(f"news for {series.ticker!r} falls entirely outside the calendar")
    event_pos = sorted(by_day)
    placed = np.zeros((len(event_pos), 3))
    for j, p in enumerate(event_pos):
        rows = by_day[p]
        placed[j, 0] = max(series.label_up[i] for i in rows)
        placed[j, 1] = max(series.label_down[i] for i in rows)
        placed[j, 2] = float(np.mean([series.score[i] for i in rows]))
    event_days = calendar.days[np.asarray(event_pos, dtype=np.int64)]
    return forward_fill_daily(event_days, placed, calendar)


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------


def fuse(
    data: MarketData,
    calendar: Calendar,
    wma_window: int,
    include_news: bool = True,
    include_reports: bool = True,
) -> AlignedFrame:
    """Build the unscaled daily frame with column blocks ordered h, m, n, r.

    All input series must already be free of missing values (see
    ``interpolate_missing``); anything non-finite is rejected.
    """
    if not data.prices:
        raise ConfigError("cannot fuse without price series; the frame would be empty")
    names: list[str] = []
    mods: list[str] = []
    cols: list[np.ndarray] = []

    def push(name: str, modality: str, values: np.ndarray) -> None:
        if not np.all(np.isfinite(values)):
            raise DataError(f"column {name!r} has missing values; impute before fusing")
        names.append(name)
        mods.append(modality)
        cols.append(values)

    for s in data.prices:
        for f in s.FIELDS:
            push(f"h:{s.ticker}:{f}", "h", place_linear(s.dates, s.field_values(f), calendar))

    for s in data.macro:
        if s.granularity == "daily":
            filled = place_linear(s.dates, s.values, calendar)
        else:
            filled = wma(forward_fill_daily(s.dates, s.values, calendar), wma_window)
        push(f"m:{s.name}", "m", filled)

    if include_news:
        for s in data.news:
            placed = _news_on_calendar(s, calendar)
            if not np.all(np.isfinite(placed)):
                raise DataError(f"news for {s.ticker!r} has missing values; impute before fusing")
            smoothed = wma(placed, wma_window)
            for j, f in enumerate(s.FIELDS):
                push(f"n:{s.ticker}:{f}", "n", smoothed[:, j])

    if include_reports:
        for s in data.reports:
            filled = forward_fill_daily(s.dates, s.ratings, calendar)
            smoothed = wma(filled, wma_window)
            for j, f in enumerate(RATING_FIELDS):
                push(f"r:{s.ticker}:{f}", "r", smoothed[:, j])

    return AlignedFrame(calendar, names, np.column_stack(cols), mods, scaled=False)


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


@dataclass
class Scaler:
    """Per-column standardization fitted on the training range only."""

    columns: list[str]
    mean: np.ndarray
    std: np.ndarray
    dropped: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "columns": list(self.columns),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_json(cls, blob: dict) -> "Scaler":
        return cls(
            list(blob["columns"]),
            np.asarray(blob["mean"], dtype=np.float64),
            np.asarray(blob["std"], dtype=np.float64),
            list(blob["dropped"]),
        )


def fit_scaler(frame: AlignedFrame, fit_range: tuple[int, int]) -> Scaler:
    """Compute train-range means and population stds; drop flat columns."""
    if frame.scaled:
        raise ContractError("frame is already standardized")
    lo, hi = fit_range
    if not (0 <= lo < hi <= frame.n_days):
        raise ConfigError(f"scaler fit range {fit_range} out of bounds for {frame.n_days} days")
    window = frame.values[lo:hi]
    mean = window.mean(axis=0)
    std = window.std(axis=0)
    keep = std > 0.0
    if not keep.any():
        raise DataError("every column is constant on the fit range; nothing to scale")
    dropped = [c for c, k in zip(frame.columns, keep) if not k]
    kept = [c for c, k in zip(frame.columns, keep) if k]
    return Scaler(kept, mean[keep], std[keep], dropped)


def apply_scaler(frame: AlignedFrame, scaler: Scaler) -> AlignedFrame:
    if frame.scaled:
        raise ContractError("frame is already standardized")
    sub = frame.select_columns(scaler.columns)
    values = (sub.values - scaler.mean) / scaler.std
    return AlignedFrame(sub.calendar, sub.columns, values, sub.modality, scaled=True)


# ---------------------------------------------------------------------------
# Frame persistence (CSV of values plus a small JSON side-car of metadata)
# ---------------------------------------------------------------------------


def frame_meta(frame: AlignedFrame) -> dict:
    return {
        "schema_version": 1,
        "columns": list(frame.columns),
        "modality": list(frame.modality),
        "scaled": bool(frame.scaled),
    }


def write_frame_csv(path: str | Path, frame: AlignedFrame) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date"] + list(frame.columns))
        for i, day in enumerate(frame.calendar.days):
            w.writerow([format_date(day)] + [repr(float(v)) for v in frame.values[i]])


def read_frame_csv(path: str | Path, meta: dict) -> AlignedFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "date" or header[1:] != list(meta["columns"]):
            raise DataError(f"{path}: header does not match the frame metadata")
        days, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                days.append(parse_date(row[0]))
                rows.append([float(c) for c in row[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if len(rows[-1]) != len(meta["columns"]):
                raise DataError(f"{path}:{lineno}: wrong number of columns")
    values = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, len(meta["columns"])))
    return AlignedFrame(
        Calendar(np.asarray(days, dtype=np.int64)),
        list(meta["columns"]),
        values,
        list(meta["modality"]),
        scaled=bool(meta["scaled"]),
    )
