"""Weighted moving average, calendar alignment, fusion, and scaling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmtf import encoding
from cmtf.data import Calendar, MacroSeries, MarketData, NewsTensorSeries, PriceSeries, ReportRatingSeries
from cmtf.errors import ConfigError, ContractError, DataError


def wma_oracle(values: np.ndarray, window: int) -> np.ndarray:
    """Direct per-row evaluation of the weighted average definition."""
    out = np.empty_like(values, dtype=np.float64)
    for t in range(len(values)):
        b = min(window, t + 1)
        w = np.arange(1, b + 1, dtype=np.float64)
        out[t] = float(w @ values[t - b + 1 : t + 1]) / float(w.sum())
    return out


# -- weighted moving average -------------------------------------------------


def test_wma_matches_oracle_over_many_series():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        window = int(rng.integers(1, 15))
        x = rng.normal(scale=10.0, size=n)
        got = encoding.wma(x, window)
        worst = max(worst, np.abs(got - wma_oracle(x, window)).max())
    assert worst <= 1e-12


def test_wma_hand_value():
    # (1*1 + 2*2 + 3*3) / (1+2+3)
    got = encoding.wma(np.array([1.0, 2.0, 3.0]), 3)
    np.testing.assert_allclose(got[2], 14.0 / 6.0, atol=1e-15)
    # prefix rows use truncated weights
    np.testing.assert_allclose(got[0], 1.0)
    np.testing.assert_allclose(got[1], (1.0 + 2.0 * 2.0) / 3.0)


def test_wma_window_one_is_identity():
    x = np.random.default_rng(0).normal(size=37)
    np.testing.assert_array_equal(encoding.wma(x, 1), x)


def test_wma_constant_series_unchanged():
    x = np.full(20, 7.25)
    np.testing.assert_allclose(encoding.wma(x, 5), 7.25, atol=1e-14)


def test_wma_2d_applies_per_column():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(15, 3))
    got = encoding.wma(x, 4)
    for j in range(3):
        np.testing.assert_allclose(got[:, j], encoding.wma(x[:, j], 4), atol=1e-14)


def test_wma_rejects_bad_window():
    with pytest.raises(ConfigError):
        encoding.wma(np.ones(3), 0)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-100, 100), min_size=1, max_size=40),
    st.integers(1, 10),
    st.floats(-50, 50),
)
def test_wma_shift_and_bounds(xs, window, shift):
    x = np.asarray(xs, dtype=np.float64)
    base = encoding.wma(x, window)
    # shifting the input shifts the output; a weighted mean stays inside
    # the window's min/max envelope
    shifted = encoding.wma(x + shift, window)
    np.testing.assert_allclose(shifted, base + shift, atol=1e-9)
    for t in range(len(x)):
        lo = x[max(0, t - window + 1) : t + 1].min()
        hi = x[max(0, t - window + 1) : t + 1].max()
        assert lo - 1e-9 <= base[t] <= hi + 1e-9


# -- calendar placement -------------------------------------------------------


def test_place_linear_interpolates_gap_days():
    cal = Calendar(np.array([10, 11, 12, 13]))
    got = encoding.place_linear(np.array([10, 13]), np.array([1.0, 7.0]), cal)
    np.testing.assert_allclose(got, [1.0, 3.0, 5.0, 7.0])


def test_place_linear_clamps_outside_span():
    cal = Calendar(np.array([8, 10, 12]))
    got = encoding.place_linear(np.array([10]), np.array([4.0]), cal)
    np.testing.assert_allclose(got, [4.0, 4.0, 4.0])


def test_forward_fill_holds_and_backfills_head():
    cal = Calendar(np.array([5, 6, 7, 8, 9]))
    got = encoding.forward_fill_daily(np.array([6, 8]), np.array([1.0, 2.0]), cal)
    np.testing.assert_allclose(got, [1.0, 1.0, 1.0, 2.0, 2.0])


def test_forward_fill_empty_series_rejected():
    with pytest.raises(DataError):
        encoding.forward_fill_daily(np.array([], dtype=np.int64), np.array([]), Calendar(np.array([1])))


# -- fusion -------------------------------------------------------------------


def one_ticker(ticker="AAA", days=None):
    days = np.array([10, 11, 12, 13, 14]) if days is None else days
    n = len(days)
    base = np.linspace(10, 12, n)
    return PriceSeries(ticker, days, base, base + 1, base - 1, base + 0.5, np.full(n, 100.0))


def market_with_everything():
    days = np.array([10, 11, 12, 13, 14])
    return MarketData(
        prices=[one_ticker()],
        macro=[
            MacroSeries("rates", "daily", days.copy(), np.linspace(1, 2, 5)),
            MacroSeries("cpi", "monthly", np.array([10]), np.array([100.0])),
        ],
        news=[
            NewsTensorSeries(
                "AAA", np.array([11, 13]), np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.5, -0.5])
            )
        ],
        reports=[ReportRatingSeries("AAA", np.array([10]), np.array([[3.0, 5.0, 4.0, 6.0, 7.0]]))],
    )


def test_fuse_orders_blocks_h_m_n_r():
    frame = encoding.fuse(market_with_everything(), Calendar(np.array([10, 11, 12, 13, 14])), 1)
    assert frame.modality == ["h"] * 5 + ["m"] * 2 + ["n"] * 3 + ["r"] * 5
    assert frame.columns[0] == "h:AAA:open"
    assert "m:rates" in frame.columns and "n:AAA:score" in frame.columns
    assert frame.columns[-1] == "r:AAA:innovation"
    assert frame.values.shape == (5, 15)
    assert not frame.scaled


def test_fuse_ablation_flags_drop_blocks():
    cal = Calendar(np.array([10, 11, 12, 13, 14]))
    market = market_with_everything()
    no_news = encoding.fuse(market, cal, 1, include_news=False)
    assert all(m != "n" for m in no_news.modality)
    bare = encoding.fuse(market, cal, 1, include_news=False, include_reports=False)
    assert set(bare.modality) == {"h", "m"}


def test_fuse_interpolates_prices_on_union_calendar():
    # BBB misses day 12; its close there is the midpoint of its neighbours
    a = one_ticker("AAA")
    b = one_ticker("BBB", days=np.array([10, 11, 13, 14]))
    cal = Calendar.union_of_prices([a, b])
    frame = encoding.fuse(MarketData(prices=[a, b]), cal, 1)
    col = frame.column("h:BBB:close")
    np.testing.assert_allclose(col[2], (col[1] + col[3]) / 2.0)


def test_fuse_news_attaches_to_next_trading_day_and_holds():
    cal = Calendar(np.array([10, 11, 13, 14]))  # 12 is not a trading day
    market = MarketData(
        prices=[one_ticker(days=np.array([10, 11, 13, 14]))],
        news=[
            NewsTensorSeries(
                "AAA",
                np.array([10, 12]),
                np.array([0.0, 1.0]),
                np.array([1.0, 0.0]),
                np.array([-0.3, 0.9]),
            )
        ],
    )
    frame = encoding.fuse(market, cal, 1)
    up = frame.column("n:AAA:label_up")
    # the day-12 event first becomes actionable on day 13 and holds after
    np.testing.assert_allclose(up, [0.0, 0.0, 1.0, 1.0])
    np.testing.assert_allclose(frame.column("n:AAA:score"), [-0.3, -0.3, 0.9, 0.9])


def test_fuse_news_head_carries_first_event():
    # days before any event carry the first event's row, matching the
    # forward-fill contract used for every slow modality
    cal = Calendar(np.array([10, 11, 12]))
    market = MarketData(
        prices=[one_ticker(days=np.array([10, 11, 12]))],
        news=[NewsTensorSeries("AAA", np.array([12]), np.array([1.0]), np.array([0.0]), np.array([0.9]))],
    )
    frame = encoding.fuse(market, cal, 1)
    np.testing.assert_allclose(frame.column("n:AAA:label_up"), [1.0, 1.0, 1.0])


def test_fuse_same_day_news_combines():
    cal = Calendar(np.array([10, 11]))
    market = MarketData(
        prices=[one_ticker(days=np.array([10, 11]))],
        news=[
            NewsTensorSeries(
                "AAA",
                np.array([10, 10]),
                np.array([1.0, 0.0]),
                np.array([0.0, 1.0]),
                np.array([0.4, 0.8]),
            )
        ],
    )
    frame = encoding.fuse(market, cal, 1)
    assert frame.column("n:AAA:label_up")[0] == 1.0  # max
    assert frame.column("n:AAA:label_down")[0] == 1.0
    np.testing.assert_allclose(frame.column("n:AAA:score")[0], 0.6)  # mean


def test_fuse_news_entirely_after_calendar_rejected():
    cal = Calendar(np.array([10, 11]))
    market = MarketData(
        prices=[one_ticker(days=np.array([10, 11]))],
        news=[NewsTensorSeries("AAA", np.array([99]), np.array([1.0]), np.array([0.0]), np.array([0.1]))],
    )
    with pytest.raises(DataError, match="outside the calendar"):
        encoding.fuse(market, cal, 1)


def test_fuse_without_prices_rejected():
    with pytest.raises(ConfigError):
        encoding.fuse(MarketData(), Calendar(np.array([10])), 1)


def test_fuse_rejects_unimputed_values():
    s = one_ticker()
    s.close[2] = np.nan
    with pytest.raises(DataError, match="impute"):
        encoding.fuse(MarketData(prices=[s]), Calendar(s.dates), 1)


def test_fuse_smooths_slow_series_not_prices():
    market = market_with_everything()
    cal = Calendar(np.array([10, 11, 12, 13, 14]))
    w1 = encoding.fuse(market, cal, 1)
    w3 = encoding.fuse(market, cal, 3)
    np.testing.assert_array_equal(w3.column("h:AAA:close"), w1.column("h:AAA:close"))
    np.testing.assert_array_equal(w3.column("m:rates"), w1.column("m:rates"))
    # report block is forward-filled then averaged, so the window matters
    # only where the prefix is still growing; compare against the oracle
    filled = np.full(5, 3.0)
    np.testing.assert_allclose(w3.column("r:AAA:risk"), encoding.wma(filled, 3))


# -- scaling -------------------------------------------------------------------


def scaled_fixture():
    rng = np.random.default_rng(9)
    cal = Calendar(np.arange(100, 140))
    values = np.column_stack([rng.normal(5, 2, 40), rng.normal(-1, 0.5, 40), np.full(40, 3.0)])
    frame = encoding.AlignedFrame(cal, ["h:A:close", "m:x", "m:flat"], values, ["h", "m", "m"])
    return frame


def test_scaler_fits_train_range_only():
    frame = scaled_fixture()
    scaler = encoding.fit_scaler(frame, (0, 24))
    out = encoding.apply_scaler(frame, scaler)
    np.testing.assert_allclose(out.values[:24].mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.values[:24].std(axis=0), 1.0, atol=1e-12)
    # full-range moments differ because the fit saw only the head
    assert abs(out.values[:, 0].mean()) > 1e-6 or abs(out.values[:, 0].std() - 1) > 1e-6


def test_scaler_drops_flat_columns():
    frame = scaled_fixture()
    scaler = encoding.fit_scaler(frame, (0, 24))
    assert scaler.dropped == ["m:flat"]
    out = encoding.apply_scaler(frame, scaler)
    assert out.columns == ["h:A:close", "m:x"]
    assert out.scaled


def test_scaler_double_apply_rejected():
    frame = scaled_fixture()
    scaler = encoding.fit_scaler(frame, (0, 24))
    out = encoding.apply_scaler(frame, scaler)
    with pytest.raises(ContractError):
        encoding.apply_scaler(out, scaler)
    with pytest.raises(ContractError):
        encoding.fit_scaler(out, (0, 24))


def test_scaler_all_flat_rejected():
    cal = Calendar(np.arange(5))
    frame = encoding.AlignedFrame(cal, ["m:a"], np.full((5, 1), 2.0), ["m"])
    with pytest.raises(DataError):
        encoding.fit_scaler(frame, (0, 5))


def test_scaler_json_round_trip():
    scaler = encoding.fit_scaler(scaled_fixture(), (0, 24))
    back = encoding.Scaler.from_json(scaler.to_json())
    assert back.columns == scaler.columns
    np.testing.assert_array_equal(back.mean, scaler.mean)
    np.testing.assert_array_equal(back.std, scaler.std)


# -- frame persistence ----------------------------------------------------------


def test_frame_csv_round_trip(tmp_path):
    frame = scaled_fixture()
    encoding.write_frame_csv(tmp_path / "frame.csv", frame)
    back = encoding.read_frame_csv(tmp_path / "frame.csv", encoding.frame_meta(frame))
    assert back.columns == frame.columns
    assert back.modality == frame.modality
    np.testing.assert_array_equal(back.values, frame.values)
    np.testing.assert_array_equal(back.calendar.days, frame.calendar.days)


def test_frame_csv_header_mismatch(tmp_path):
    frame = scaled_fixture()
    encoding.write_frame_csv(tmp_path / "frame.csv", frame)
    meta = encoding.frame_meta(frame)
    meta["columns"] = ["wrong"]
    meta["modality"] = ["m"]
    with pytest.raises(DataError, match="header"):
        encoding.read_frame_csv(tmp_path / "frame.csv", meta)


def test_select_columns_preserves_order_and_modality():
    frame = scaled_fixture()
    sub = frame.select_columns(["m:x", "h:A:close"])
    assert sub.columns == ["m:x", "h:A:close"]
    assert sub.modality == ["m", "h"]
    np.testing.assert_array_equal(sub.values[:, 1], frame.values[:, 0])
