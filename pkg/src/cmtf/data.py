"""Loading, validation, and chronological splitting of the four raw inputs.

All files are UTF-8 CSV with a header row and exact lowercase column names:

    prices.csv:  date,ticker,open,high,low,close,volume
    macro.csv:   date,name,value,granularity
    news.csv:    date,ticker,label_up,label_down,score
    reports.csv: date,ticker,risk,market_conditions,regulation,esg,innovation

Dates are ISO-8601 in files and proleptic-ordinal day integers in memory,
so sorting and calendar arithmetic are plain integer operations.
Validation failures name the offending file line (header is line 1).
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

GRANULARITIES = ("daily", "monthly", "quarterly")

# Acceptable day gaps between consecutive observations per granularity.
_SPACING_BOUNDS = {"monthly": (23, 37), "quarterly": (46, 136)}

PRICE_COLUMNS = ["date", "ticker", "open", "high", "low", "close", "volume"]
MACRO_COLUMNS = ["date", "name", "value", "granularity"]
NEWS_COLUMNS = ["date", "ticker", "label_up", "label_down", "score"]
REPORT_COLUMNS = ["date", "ticker", "risk", "market_conditions", "regulation", "esg", "innovation"]
RATING_FIELDS = ["risk", "market_conditions", "regulation", "esg", "innovation"]


def parse_date(text: str) -> int:
    return _dt.date.fromisoformat(text).toordinal()


def format_date(day: int) -> str:
    return _dt.date.fromordinal(int(day)).isoformat()


@dataclass
class PriceSeries:
    """Daily OHLCV rows for one ticker; prices in quote currency, volume in shares."""

    ticker: str
    dates: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    FIELDS = ("open", "high", "low", "close", "volume")

    def field_values(self, name: str) -> np.ndarray:
        return getattr(self, name)


@dataclass
class MacroSeries:
    name: str
    granularity: str
    dates: np.ndarray
    values: np.ndarray


@dataclass
class NewsTensorSeries:
    """Pre-extracted per-day news tensor: two binary labels and one score."""

    ticker: str
    dates: np.ndarray
    label_up: np.ndarray
    label_down: np.ndarray
    score: np.ndarray

    FIELDS = ("label_up", "label_down", "score")

    def field_values(self, name: str) -> np.ndarray:
        return getattr(self, name)


@dataclass
class ReportRatingSeries:
    """Quarterly five-dimension rating vectors, each rating an integer in [1, 9]."""

    ticker: str
    dates: np.ndarray
    ratings: np.ndarray  # shape (n, 5), columns in RATING_FIELDS order

    FIELDS = tuple(RATING_FIELDS)

    def field_values(self, name: str) -> np.ndarray:
        return self.ratings[:, RATING_FIELDS.index(name)]


@dataclass
class Calendar:
    """Ordered trading dates defining the time axis."""

    days: np.ndarray

    def __post_init__(self):
        self.days = np.asarray(self.days, dtype=np.int64)
        if self.days.size and np.any(np.diff(self.days) <= 0):
            raise DataError("calendar dates must be strictly increasing")

    def __len__(self) -> int:
        return int(self.days.size)

    @classmethod
    def union_of_prices(cls, prices: list[PriceSeries]) -> "Calendar":
        if not prices:
            raise DataError("cannot build a calendar from zero price series")
        merged = np.unique(np.concatenate([p.dates for p in prices]))
        return cls(merged)


@dataclass
class MarketData:
    """Everything the encoder consumes, validated and imputation-ready."""

    prices: list[PriceSeries] = field(default_factory=list)
    macro: list[MacroSeries] = field(default_factory=list)
    news: list[NewsTensorSeries] = field(default_factory=list)
    reports: list[ReportRatingSeries] = field(default_factory=list)

    @property
    def tickers(self) -> list[str]:
        return [p.ticker for p in self.prices]


# ---------------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------------


def _open_rows(path: str | Path, expected: list[str]):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header != expected:
            raise DataError(
                f"{path}: header {header!r} does not match required columns {expected!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != len(expected):
                raise DataError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            yield lineno, row


def _parse_float(path, lineno, name, text, allow_missing=False) -> float:
    text = text.strip()
    if text == "":
        if allow_missing:
            return math.nan
        raise DataError(f"{path}:{lineno}: column '{name}' may not be empty")
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: cannot parse '{name}' value {text!r} as a number") from None


def _parse_day(path, lineno, text) -> int:
    try:
        return parse_date(text.strip())
    except ValueError:
        raise DataError(f"{path}:{lineno}: cannot parse date {text!r} (expected ISO-8601)") from None


def _sort_grouped(rows_by_key: dict, path, what: str):
    """Sort each group's rows by date, rejecting duplicate dates."""
    for key, rows in rows_by_key.items():
        rows.sort(key=lambda r: r[0])
        for (d1, _, ln1), (d2, _, ln2) in zip(rows, rows[1:]):
            if d1 == d2:
                raise DataError(
                    f"{path}:{ln2}: duplicate {what} entry for {key!r} on {format_date(d1)}"
                    f" (first seen at line {ln1})"
                )


def load_prices(path: str | Path) -> list[PriceSeries]:
    grouped: dict[str, list] = {}
    for lineno, row in _open_rows(path, PRICE_COLUMNS):
        day = _parse_day(path, lineno, row[0])
        ticker = row[1].strip()
        if not ticker:
            raise DataError(f"{path}:{lineno}: empty ticker")
        vals = [
            _parse_float(path, lineno, name, cell, allow_missing=True)
            for name, cell in zip(PRICE_COLUMNS[2:], row[2:])
        ]
        for name, v in zip(("open", "high", "low", "close"), vals[:4]):
            if not math.isnan(v) and v <= 0:
                raise DataError(f"{path}:{lineno}: {name} must be > 0, got {v}")
        if not math.isnan(vals[4]) and vals[4] < 0:
            raise DataError(f"{path}:{lineno}: volume must be >= 0, got {vals[4]}")
        grouped.setdefault(ticker, []).append((day, vals, lineno))
    if not grouped:
        raise DataError(f"{path}: no data rows")
    _sort_grouped(grouped, path, "price")
    out = []
    for ticker in sorted(grouped):
        rows = grouped[ticker]
        days = np.array([r[0] for r in rows], dtype=np.int64)
        cols = np.array([r[1] for r in rows], dtype=np.float64)
        out.append(PriceSeries(ticker, days, cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3], cols[:, 4]))
    return out


def _check_spacing(path, name: str, granularity: str, days: np.ndarray) -> None:
    bounds = _SPACING_BOUNDS.get(granularity)
    if bounds is None or days.size < 2:
        return
    gaps = np.diff(days)
    bad = np.where((gaps < bounds[0]) | (gaps > bounds[1]))[0]
    if bad.size:
        i = int(bad[0])
        raise DataError(
            f"{path}: series {name!r} tagged {granularity} has a {int(gaps[i])}-day gap "
            f"between {format_date(days[i])} and {format_date(days[i + 1])} "
            f"(allowed {bounds[0]}..{bounds[1]})"
        )


def load_macro(path: str | Path) -> list[MacroSeries]:
    grouped: dict[str, list] = {}
    gran: dict[str, str] = {}
    for lineno, row in _open_rows(path, MACRO_COLUMNS):
        day = _parse_day(path, lineno, row[0])
        name = row[1].strip()
        if not name:
            raise DataError(f"{path}:{lineno}: empty series name")
        value = _parse_float(path, lineno, "value", row[2], allow_missing=True)
        g = row[3].strip()
        if g not in GRANULARITIES:
            raise DataError(f"{path}:{lineno}: granularity {g!r} not one of {GRANULARITIES}")
        if name in gran and gran[name] != g:
            raise DataError(f"{path}:{lineno}: series {name!r} has conflicting granularity tags")
        gran[name] = g
        grouped.setdefault(name, []).append((day, value, lineno))
    if not grouped:
        raise DataError(f"{path}: no data rows")
    _sort_grouped(grouped, path, "macro")
    out = []
    for name in sorted(grouped):
        rows = grouped[name]
        days = np.array([r[0] for r in rows], dtype=np.int64)
        values = np.array([r[1] for r in rows], dtype=np.float64)
        _check_spacing(path, name, gran[name], days)
        out.append(MacroSeries(name, gran[name], days, values))
    return out


def load_news(path: str | Path) -> list[NewsTensorSeries]:
    grouped: dict[str, list] = {}
    for lineno, row in _open_rows(path, NEWS_COLUMNS):
        day = _parse_day(path, lineno, row[0])
        ticker = row[1].strip()
        if not ticker:
            raise DataError(f"{path}:{lineno}: empty ticker")
        labels = []
        for name, cell in zip(("label_up", "label_down"), row[2:4]):
            v = _parse_float(path, lineno, name, cell)
            if v not in (0.0, 1.0):
                raise DataError(f"{path}:{lineno}: {name} must be 0 or 1, got {cell!r}")
            labels.append(v)
        score = _parse_float(path, lineno, "score", row[4], allow_missing=True)
        grouped.setdefault(ticker, []).append((day, labels + [score], lineno))
    if not grouped:
        raise DataError(f"{path}: no data rows")
    _sort_grouped(grouped, path, "news")
    out = []
    for ticker in sorted(grouped):
        rows = grouped[ticker]
        days = np.array([r[0] for r in rows], dtype=np.int64)
        cols = np.array([r[1] for r in rows], dtype=np.float64)
        out.append(NewsTensorSeries(ticker, days, cols[:, 0], cols[:, 1], cols[:, 2]))
    return out


def load_reports(path: str | Path) -> list[ReportRatingSeries]:
    grouped: dict[str, list] = {}
    for lineno, row in _open_rows(path, REPORT_COLUMNS):
        day = _parse_day(path, lineno, row[0])
        ticker = row[1].strip()
        if not ticker:
            raise DataError(f"{path}:{lineno}: empty ticker")
        ratings = []
        for name, cell in zip(RATING_FIELDS, row[2:]):
            v = _parse_float(path, lineno, name, cell)
            if v != int(v) or not (1 <= v <= 9):
                raise DataError(
                    f"{path}:{lineno}: rating '{name}' must be an integer in [1, 9], got {cell!r}"
                )
            ratings.append(v)
        grouped.setdefault(ticker, []).append((day, ratings, lineno))
    if not grouped:
        raise DataError(f"{path}: no data rows")
    _sort_grouped(grouped, path, "report")
    out = []
    for ticker in sorted(grouped):
        rows = grouped[ticker]
        days = np.array([r[0] for r in rows], dtype=np.int64)
        ratings = np.array([r[1] for r in rows], dtype=np.float64)
        _check_spacing(path, ticker, "quarterly", days)
        out.append(ReportRatingSeries(ticker, days, ratings))
    return out


# ---------------------------------------------------------------------------
# CSV writing (round-trip partners of the loaders; also used by synth)
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_prices(path: str | Path, series: list[PriceSeries]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PRICE_COLUMNS)
        for s in series:
            for i, day in enumerate(s.dates):
                w.writerow([format_date(day), s.ticker] + [_fmt(s.field_values(f)[i]) for f in s.FIELDS])


def write_macro(path: str | Path, series: list[MacroSeries]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MACRO_COLUMNS)
        for s in series:
            for day, value in zip(s.dates, s.values):
                w.writerow([format_date(day), s.name, _fmt(value), s.granularity])


def write_news(path: str | Path, series: list[NewsTensorSeries]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(NEWS_COLUMNS)
        for s in series:
            for i, day in enumerate(s.dates):
                w.writerow(
                    [format_date(day), s.ticker, int(s.label_up[i]), int(s.label_down[i]), _fmt(s.score[i])]
                )


def write_reports(path: str | Path, series: list[ReportRatingSeries]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for s in series:
            for i, day in enumerate(s.dates):
                w.writerow([format_date(day), s.ticker] + [int(r) for r in s.ratings[i]])


# ---------------------------------------------------------------------------
# Missing-value handling
# ---------------------------------------------------------------------------


def _interp_linear(days: np.ndarray, values: np.ndarray, label: str) -> np.ndarray:
    valid = np.isfinite(values)
    if not valid.any():
        raise DataError(f"{label}: series is entirely missing, cannot interpolate")
    if valid.all():
        return values.copy()
    # np.interp clamps outside the valid range, which fills leading and
    # trailing gaps with the nearest observed value.
    return np.interp(days.astype(np.float64), days[valid].astype(np.float64), values[valid])


def interpolate_missing(series, method: str):
    """Return a copy of ``series`` with no missing values on its native grid.

    ``linear`` interpolates in time between the nearest observed neighbours
    (edges filled with the nearest valid value) and suits numeric series;
    ``zero`` fills gaps with 0 and suits text-derived tensors.
    """
    if method not in ("linear", "zero"):
        raise ConfigError(f"interpolate_missing: unknown method {method!r}")

    def fix(values: np.ndarray, label: str) -> np.ndarray:
        if method == "zero":
            if not np.isfinite(values).any():
                raise DataError(f"{label}: series is entirely missing, cannot impute")
            return np.nan_to_num(values, nan=0.0)
        return _interp_linear(series.dates, values, label)

    if isinstance(series, PriceSeries):
        return PriceSeries(
            series.ticker,
            series.dates.copy(),
            *[fix(series.field_values(f), f"{series.ticker}.{f}") for f in series.FIELDS],
        )
    if isinstance(series, MacroSeries):
        return MacroSeries(series.name, series.granularity, series.dates.copy(), fix(series.values, series.name))
    if isinstance(series, NewsTensorSeries):
        return NewsTensorSeries(
            series.ticker,
            series.dates.copy(),
            series.label_up.copy(),
            series.label_down.copy(),
            fix(series.score, f"{series.ticker}.score"),
        )
    if isinstance(series, ReportRatingSeries):
        return ReportRatingSeries(series.ticker, series.dates.copy(), series.ratings.copy())
    raise ConfigError(f"interpolate_missing: unsupported series type {type(series).__name__}")


# ---------------------------------------------------------------------------
# Chronological splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    """Contiguous, disjoint, order-preserving index ranges into a calendar."""

    train: tuple[int, int]
    validation: tuple[int, int]
    test: tuple[int, int]

    def sizes(self) -> tuple[int, int, int]:
        return (
            self.train[1] - self.train[0],
            self.validation[1] - self.validation[0],
            self.test[1] - self.test[0],
        )


def split_chronological(calendar: Calendar, ratios: tuple[float, float, float]) -> Split:
    """Floor-allocate validation and test; the remainder goes to train."""
    if len(ratios) != 3:
        raise ConfigError(f"need exactly 3 split ratios, got {len(ratios)}")
    for r in ratios:
        if not (0.0 < r < 1.0):
            raise ConfigError(f"split ratios must lie in (0, 1), got {r}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = len(calendar)
    if n == 0:
        raise ConfigError("cannot split an empty calendar")
    n_val = int(math.floor(n * ratios[1]))
    n_test = int(math.floor(n * ratios[2]))
    n_train = n - n_val - n_test
    return Split((0, n_train), (n_train, n_train + n_val), (n_train + n_val, n))


# ---------------------------------------------------------------------------
# JSON round-trip for the ingest stage artifact
# ---------------------------------------------------------------------------


def market_data_to_json(data: MarketData) -> dict:
    return {
        "schema_version": 1,
        "prices": [
            {
                "ticker": s.ticker,
                "dates": [format_date(d) for d in s.dates],
                **{f: s.field_values(f).tolist() for f in s.FIELDS},
            }
            for s in data.prices
        ],
        "macro": [
            {
                "name": s.name,
                "granularity": s.granularity,
                "dates": [format_date(d) for d in s.dates],
                "values": s.values.tolist(),
            }
            for s in data.macro
        ],
        "news": [
            {
                "ticker": s.ticker,
                "dates": [format_date(d) for d in s.dates],
                **{f: s.field_values(f).tolist() for f in s.FIELDS},
            }
            for s in data.news
        ],
        "reports": [
            {
                "ticker": s.ticker,
                "dates": [format_date(d) for d in s.dates],
                "ratings": s.ratings.tolist(),
            }
            for s in data.reports
        ],
    }


def market_data_from_json(blob: dict) -> MarketData:
    def days(strings):
        return np.array([parse_date(s) for s in strings], dtype=np.int64)

    return MarketData(
        prices=[
            PriceSeries(
                p["ticker"],
                days(p["dates"]),
                *[np.asarray(p[f], dtype=np.float64) for f in PriceSeries.FIELDS],
            )
            for p in blob["prices"]
        ],
        macro=[
            MacroSeries(m["name"], m["granularity"], days(m["dates"]), np.asarray(m["values"], dtype=np.float64))
            for m in blob["macro"]
        ],
        news=[
            NewsTensorSeries(
                n["ticker"],
                days(n["dates"]),
                *[np.asarray(n[f], dtype=np.float64) for f in NewsTensorSeries.FIELDS],
            )
            for n in blob["news"]
        ],
        reports=[
            ReportRatingSeries(r["ticker"], days(r["dates"]), np.asarray(r["ratings"], dtype=np.float64))
            for r in blob["reports"]
        ],
    )


def save_market_data(path: str | Path, data: MarketData) -> None:
    Path(path).write_text(json.dumps(market_data_to_json(data), sort_keys=True), encoding="utf-8")


def load_market_data(path: str | Path) -> MarketData:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    return market_data_from_json(json.loads(path.read_text(encoding="utf-8")))
