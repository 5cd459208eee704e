"""Synthetic market datasets with known ground truth.

Two generators share one skeleton (weekday calendar, OHLCV prices, daily
news tensors, monthly and daily macro series, quarterly report ratings):

* ``planted``: next-day direction is exactly the sign of today's news
  score, so a pipeline that reaches the news modality can classify almost
  perfectly while price-only baselines stay at chance.
* ``walk``: multiplicative random-walk prices with news, macro, and report
  columns that carry no information at all; the right price forecast is
  today's price and direction is a fair coin.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass

import numpy as np

from .data import (
    MacroSeries,
    MarketData,
    NewsTensorSeries,
    PriceSeries,
    ReportRatingSeries,
    parse_date,
)
from .errors import ConfigError

KINDS = ("planted", "walk")


@dataclass
class SynthConfig:
    kind: str = "planted"
    n_stocks: int = 5
    n_days: int = 1200
    seed: int = 7
    start_date: str = "2019-02-04"
    effect: float = 0.02  # planted: per-day move magnitude
    vol: float = 0.01  # walk: daily return volatility
    label_noise: float = 0.1  # planted: flip rate of the binary news labels

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"synth kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_stocks < 1:
            raise ConfigError(f"n_stocks must be >= 1, got {self.n_stocks}")
        if self.n_days < 10:
            raise ConfigError(f"n_days must be >= 10, got {self.n_days}")
        if not (0.0 < self.effect < 0.5):
            raise ConfigError(f"effect must lie in (0, 0.5), got {self.effect}")
        if not (0.0 < self.vol < 0.5):
            raise ConfigError(f"vol must lie in (0, 0.5), got {self.vol}")
        if not (0.0 <= self.label_noise < 0.5):
            raise ConfigError(f"label_noise must lie in [0, 0.5), got {self.label_noise}")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "n_stocks": self.n_stocks,
            "n_days": self.n_days,
            "seed": self.seed,
            "start_date": self.start_date,
            "effect": self.effect,
            "vol": self.vol,
            "label_noise": self.label_noise,
        }

    @classmethod
    def from_json(cls, blob: dict) -> "SynthConfig":
        return cls(
            kind=str(blob.get("kind", "planted")),
            n_stocks=int(blob.get("n_stocks", 5)),
            n_days=int(blob.get("n_days", 1200)),
            seed=int(blob.get("seed", 7)),
            start_date=str(blob.get("start_date", "2019-02-04")),
            effect=float(blob.get("effect", 0.02)),
            vol=float(blob.get("vol", 0.01)),
            label_noise=float(blob.get("label_noise", 0.1)),
        )


def weekday_span(start_iso: str, n_days: int) -> np.ndarray:
    """First n_days Mondays-to-Fridays on or after the start date."""
    day = parse_date(start_iso)
    out = []
    while len(out) < n_days:
        if _dt.date.fromordinal(day).weekday() < 5:
            out.append(day)
        day += 1
    return np.asarray(out, dtype=np.int64)


def _first_days_of(period_key, days: np.ndarray) -> np.ndarray:
    seen = set()
    firsts = []
    for d in days:
        key = period_key(_dt.date.fromordinal(int(d)))
        if key not in seen:
            seen.add(key)
            firsts.append(d)
    return np.asarray(firsts, dtype=np.int64)


def _ohlcv(rng: np.random.Generator, close: np.ndarray):
    opens = np.empty_like(close)
    opens[0] = close[0] * 0.998
    opens[1:] = close[:-1]
    high = np.maximum(opens, close) * 1.004
    low = np.minimum(opens, close) * 0.996
    volume = rng.integers(500_000, 2_000_000, size=close.size).astype(np.float64)
    return opens, high, low, volume


def generate(cfg: SynthConfig) -> MarketData:
    rng = np.random.default_rng(cfg.seed)
    days = weekday_span(cfg.start_date, cfg.n_days)
    n = cfg.n_days
    data = MarketData()

    for i in range(cfg.n_stocks):
        ticker = f"S{i:02d}"
        if cfg.kind == "planted":
            sign = rng.choice([-1.0, 1.0], size=n)
            score = sign * rng.uniform(0.5, 1.5, size=n)
            close = np.empty(n)
            close[0] = 60.0 + 12.0 * i
            for t in range(n - 1):
                close[t + 1] = close[t] * (1.0 + cfg.effect * sign[t])
            label_up = (sign > 0).astype(np.float64)
            label_down = (sign < 0).astype(np.float64)
            for labels in (label_up, label_down):
                flips = rng.random(n) < cfg.label_noise
                labels[flips] = 1.0 - labels[flips]
        else:
            returns = np.clip(cfg.vol * rng.standard_normal(n), -0.5, 0.5)
            close = np.empty(n)
            close[0] = 60.0 + 12.0 * i
            for t in range(n - 1):
                close[t + 1] = close[t] * (1.0 + returns[t])
            score = rng.standard_normal(n)
            label_up = rng.integers(0, 2, size=n).astype(np.float64)
            label_down = rng.integers(0, 2, size=n).astype(np.float64)

        opens, high, low, volume = _ohlcv(rng, close)
        data.prices.append(PriceSeries(ticker, days.copy(), opens, high, low, close, volume))
        data.news.append(NewsTensorSeries(ticker, days.copy(), label_up, label_down, score))

        quarter_days = _first_days_of(lambda d: (d.year, (d.month - 1) // 3), days)
        ratings = rng.integers(1, 10, size=(quarter_days.size, 5)).astype(np.float64)
        data.reports.append(ReportRatingSeries(ticker, quarter_days, ratings))

    month_days = _first_days_of(lambda d: (d.year, d.month), days)
    cpi = 100.0 + np.cumsum(rng.normal(0.0, 0.5, size=month_days.size))
    data.macro.append(MacroSeries("cpi_monthly", "monthly", month_days, cpi))
    rate = 2.0 + np.cumsum(rng.normal(0.0, 0.01, size=n))
    data.macro.append(MacroSeries("rate_daily", "daily", days.copy(), rate))
    return data
