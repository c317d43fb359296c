"""
Tests for tape loading, Lee-Ready classification, trading time and market volume
"""

from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from hidden_order_hmm.config import SchemaConfig
from hidden_order_hmm.errors import DataError, DomainError
from hidden_order_hmm.trades import (
    Initiator,
    TradingCalendar,
    Transaction,
    classify_initiator,
    daily_closes,
    load_calendar,
    load_transactions,
    market_volume_between,
    market_volumes_between,
    member_periods,
    previous_distinct_prices,
    trading_time_elapsed,
)

HEADER = "timestamp,member_id,sign,shares,price,bid,ask\n"


def ts(text: str) -> float:
    return pd.Timestamp(text, tz="UTC").timestamp()


def write_tape(tmp_path: Path, rows) -> Path:
    path = tmp_path / "tape.csv"
    path.write_text(HEADER + "".join(f"{row}\n" for row in rows), encoding="utf-8")
    return path


@pytest.fixture
def calendar(fixtures_dir) -> TradingCalendar:
    return load_calendar(fixtures_dir / "calendar.json")


@pytest.fixture
def small_tape(fixtures_dir, calendar):
    return load_transactions(fixtures_dir / "small_tape.csv", SchemaConfig(), calendar)


class TestLeeReady:
    def test_quote_rule(self):
        at_ask = Transaction(0.0, "M1", 1, 100, 10.02, best_bid=10.00, best_ask=10.02)
        at_bid = Transaction(0.0, "M1", 1, 100, 10.00, best_bid=10.00, best_ask=10.02)
        assert classify_initiator(at_ask) is Initiator.BUYER
        assert classify_initiator(at_bid) is Initiator.SELLER

    def test_tick_rule_at_the_midquote(self):
        uptick = Transaction(0.0, "M1", 1, 100, 10.01, 10.00, 10.02, prev_price=10.00)
        downtick = Transaction(0.0, "M1", 1, 100, 10.01, 10.00, 10.02, prev_price=10.02)
        assert classify_initiator(uptick) is Initiator.BUYER
        assert classify_initiator(downtick) is Initiator.SELLER

    def test_no_information_is_unclassified(self):
        tx = Transaction(0.0, "M1", -1, 100, 10.01, 10.00, 10.02)
        assert classify_initiator(tx) is Initiator.UNCLASSIFIED
        assert Initiator.UNCLASSIFIED.side == 0

    def test_missing_quotes_fall_back_to_tick_test(self):
        assert classify_initiator(Transaction(0.0, "M1", 1, 5, 9.0, prev_price=9.5)) is Initiator.SELLER

    def test_previous_distinct_price_skips_repeats(self):
        prev = previous_distinct_prices(np.array([1.0, 2.0, 2.0, 2.0, 1.5]))
        np.testing.assert_array_equal(prev[1:], [1.0, 1.0, 1.0, 2.0])
        assert np.isnan(prev[0])

    def test_hand_labeled_tape(self, fixtures_dir, calendar):
        tape = load_transactions(fixtures_dir / "lee_ready_20.csv", SchemaConfig(), calendar)
        expected = pd.read_csv(fixtures_dir / "lee_ready_20.csv")["expected"]
        sides = expected.map(lambda value: Initiator(value).side).to_numpy()
        np.testing.assert_array_equal(tape.frame["initiator"].to_numpy(), sides)
        for row, value in enumerate(expected):
            assert classify_initiator(tape.transaction(row)) is Initiator(value)


class TestTransaction:
    def test_rejects_invalid_fields(self):
        with pytest.raises(DomainError):
            Transaction(0.0, "M1", 0, 100, 10.0)
        with pytest.raises(DomainError):
            Transaction(0.0, "M1", 1, 0, 10.0)
        with pytest.raises(DomainError):
            Transaction(0.0, "M1", 1, 100, 10.0, best_bid=10.02, best_ask=10.00)

    def test_euro_volume(self):
        assert Transaction(0.0, "M1", 1, 250, 4.0).euro_volume == 1000.0


class TestCalendar:
    def test_weekdays_skip_weekends_and_holidays(self):
        calendar = TradingCalendar.weekdays(
            date(2004, 1, 1), date(2004, 1, 11), holidays=[date(2004, 1, 6)]
        )
        assert [d.day for d in calendar.dates] == [1, 2, 5, 7, 8, 9]

    def test_session_times_follow_the_timezone(self):
        calendar = TradingCalendar.from_entries(
            [{"date": "2004-01-05", "open": "09:00", "close": "17:30"}], tz="Europe/Madrid"
        )
        assert calendar.opens[0] == ts("2004-01-05 08:00")

    def test_overlapping_sessions_raise(self):
        with pytest.raises(DomainError):
            TradingCalendar(opens=[0.0, 50.0], closes=[100.0, 200.0])

    def test_malformed_entry_raises(self):
        with pytest.raises(DataError):
            TradingCalendar.from_entries([{"date": "2004-01-05", "open": "09:00"}])

    def test_close_belongs_to_its_session(self, calendar):
        index = calendar.session_index(np.array([ts("2004-01-05 17:30"), ts("2004-01-05 17:31")]))
        np.testing.assert_array_equal(index, [0, -1])


class TestTradingTime:
    def test_within_one_session(self, calendar):
        seconds, clamped = trading_time_elapsed(
            calendar, ts("2004-01-05 10:00"), ts("2004-01-05 10:30")
        )
        assert seconds == 1800.0
        assert not clamped

    def test_overnight_gap_is_removed(self, calendar):
        seconds, _ = trading_time_elapsed(calendar, ts("2004-01-05 17:00"), ts("2004-01-06 09:30"))
        assert seconds == 3600.0
        seconds, _ = trading_time_elapsed(calendar, ts("2004-01-05 17:30"), ts("2004-01-06 09:00"))
        assert seconds == 0.0

    def test_weekend_gap_is_removed(self, calendar):
        seconds, _ = trading_time_elapsed(calendar, ts("2004-01-09 16:30"), ts("2004-01-12 09:30"))
        assert seconds == 3600.0

    def test_zero_interval(self, calendar):
        t = ts("2004-01-07 11:11")
        assert trading_time_elapsed(calendar, t, t) == (0.0, False)

    def test_additivity(self, calendar):
        a, b, c = ts("2004-01-05 11:00"), ts("2004-01-07 12:00"), ts("2004-01-09 15:45")
        ab, _ = trading_time_elapsed(calendar, a, b)
        bc, _ = trading_time_elapsed(calendar, b, c)
        ac, _ = trading_time_elapsed(calendar, a, c)
        assert ab + bc == pytest.approx(ac)

    def test_instants_outside_sessions_are_clamped(self, calendar):
        seconds, clamped = trading_time_elapsed(
            calendar, ts("2004-01-05 17:00"), ts("2004-01-05 20:00")
        )
        assert seconds == 1800.0
        assert clamped

    def test_reversed_interval_raises(self, calendar):
        with pytest.raises(DomainError):
            trading_time_elapsed(calendar, ts("2004-01-06 10:00"), ts("2004-01-05 10:00"))


class TestLoading:
    def test_small_tape_loads_cleanly(self, small_tape):
        assert len(small_tape) == 10
        assert small_tape.report.rows_rejected == 0
        assert small_tape.member_ids() == ["M1", "M2", "M3"]
        assert small_tape.frame["period"].unique().tolist() == [2004]

    def test_rejected_rows_carry_line_numbers(self, tmp_path, calendar):
        path = write_tape(tmp_path, [
            "2004-01-05T10:00:00,M1,1,10,1.00,,",
            "2004-01-05T10:01:00,M1,1,10,1.00,,",
            "2004-01-05T10:02:00,M1,1,0,1.00,,",
            "2004-01-04T10:03:00,M1,1,10,1.00,,",
        ])
        tape = load_transactions(path, SchemaConfig(max_malformed_fraction=1.0), calendar)
        assert tape.report.rejected == [
            (4, "shares must be positive"),
            (5, "outside trading sessions"),
        ]
        assert len(tape) == 2

    def test_too_many_malformed_rows_raise(self, tmp_path, calendar):
        path = write_tape(tmp_path, [
            "2004-01-05T10:00:00,M1,1,10,1.00,,",
            "2004-01-05T10:01:00,M1,2,10,1.00,,",
        ])
        with pytest.raises(DataError):
            load_transactions(path, SchemaConfig(), calendar)

    def test_missing_column_raises(self, tmp_path, calendar):
        path = tmp_path / "tape.csv"
        path.write_text("timestamp,member_id,sign\n2004-01-05T10:00:00,M1,1\n", encoding="utf-8")
        with pytest.raises(DataError):
            load_transactions(path, SchemaConfig(), calendar)

    def test_out_of_order_rows_are_sorted(self, tmp_path, calendar):
        path = write_tape(tmp_path, [
            "2004-01-05T10:01:00,M1,1,10,1.00,,",
            "2004-01-05T10:00:00,M2,-1,10,1.01,,",
            "2004-01-05T10:02:00,M1,1,10,1.02,,",
        ])
        tape = load_transactions(path, SchemaConfig(), calendar)
        assert tape.report.reordered == 2
        assert tape.frame["member_id"].tolist() == ["M2", "M1", "M1"]
        assert np.all(np.diff(tape.frame["timestamp"]) >= 0)

    def test_mixed_utc_offsets(self, tmp_path, calendar):
        path = write_tape(tmp_path, [
            "2004-01-05T10:00:00+00:00,M1,1,10,1.00,,",
            "2004-01-05T11:00:00+01:00,M2,-1,10,1.00,,",
            "2004-01-05T10:30:00Z,M1,1,10,1.00,,",
            "2004-01-05T10:20:00,M3,1,10,1.00,,",
            "2004-13-05T10:00:00+00:00,M1,1,10,1.00,,",
        ])
        tape = load_transactions(path, SchemaConfig(max_malformed_fraction=1.0), calendar)
        assert tape.report.rejected == [(6, "unparseable timestamp")]
        np.testing.assert_array_equal(
            tape.frame["timestamp"].to_numpy(),
            [ts("2004-01-05 10:00"), ts("2004-01-05 10:00"),
             ts("2004-01-05 10:20"), ts("2004-01-05 10:30")],
        )
        with pytest.raises(DataError):
            load_transactions(path, SchemaConfig(), calendar)

    def test_member_transactions_by_period(self, small_tape):
        rows = small_tape.member_transactions("M1", 2004)
        assert len(rows) == 7
        assert small_tape.member_transactions("M1", 2005).empty


class TestMarketVolume:
    def test_closed_interval_sums(self, small_tape):
        assert market_volume_between(small_tape, ts("2004-01-05 10:00"), ts("2004-01-05 10:30")) == 340.0
        assert market_volume_between(small_tape, ts("2004-01-05 10:05"), ts("2004-01-05 10:15")) == 210.0

    def test_empty_interval_is_zero(self, small_tape):
        assert market_volume_between(small_tape, ts("2004-01-05 12:00"), ts("2004-01-05 13:00")) == 0.0

    def test_participation_of_a_member_run(self, small_tape):
        # M1's four trades from 10:00 to 10:25 inside 240 euro of market volume
        market = market_volume_between(small_tape, ts("2004-01-05 10:00"), ts("2004-01-05 10:25"))
        assert 40.0 / market == pytest.approx(40.0 / 240.0)

    def test_vectorized_matches_scalar(self, small_tape):
        starts = np.array([ts("2004-01-05 10:00"), ts("2004-01-05 17:00")])
        ends = np.array([ts("2004-01-05 10:10"), ts("2004-01-06 09:30")])
        np.testing.assert_allclose(market_volumes_between(small_tape, starts, ends), [120.0, 30.1])

    def test_both_sides_feed_counts_matched_trades_once(self, tmp_path, calendar):
        path = write_tape(tmp_path, [
            "2004-01-05T10:00:00,M1,1,100,2.00,,",
            "2004-01-05T10:00:00,M2,-1,100,2.00,,",
            "2004-01-05T10:01:00,M3,1,50,2.00,,",
        ])
        t0, t1 = ts("2004-01-05 10:00"), ts("2004-01-05 10:01")
        single = load_transactions(path, SchemaConfig(), calendar)
        both = load_transactions(path, SchemaConfig(both_sides_feed=True), calendar)
        assert market_volume_between(single, t0, t1) == 500.0
        assert market_volume_between(both, t0, t1) == 300.0


def test_daily_closes(small_tape):
    closes = daily_closes(small_tape)
    assert closes.index.tolist() == [pd.Timestamp("2004-01-05"), pd.Timestamp("2004-01-06")]
    np.testing.assert_allclose(closes.to_numpy(), [1.01, 1.00])


def test_member_periods(small_tape):
    summary = member_periods(small_tape).set_index("member_id")
    assert summary.loc["M1", "transactions"] == 7
    assert summary.loc["M1", "active_days"] == 2
    assert summary.loc["M3", "active_days"] == 1
