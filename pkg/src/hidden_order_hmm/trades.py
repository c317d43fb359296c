"""
Transactions and Market Tape

Transaction records, CSV ingestion with row-level validation, the trading
calendar (trading time with overnight and holiday gaps removed), Lee-Ready
initiator classification and market-wide euro volume between two instants.

Times are float seconds since the Unix epoch (UTC). A calendar session is the
closed interval [open, close]; an instant exactly at the close belongs to the
session that closes.
"""

import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import SchemaConfig
from .errors import DataError, DomainError

logger = logging.getLogger(__name__)

MIDQUOTE_TOLERANCE = 1e-9
EPOCH = pd.Timestamp(0, tz="UTC")
# explicit UTC offset (or Z) ending an ISO-8601 timestamp
OFFSET_SUFFIX = r"(?:Z|[+-]\d{2}:?\d{2})$"


class Initiator(str, Enum):
    BUYER = "buyer_initiated"
    SELLER = "seller_initiated"
    UNCLASSIFIED = "unclassified"

    @property
    def side(self) -> int:
        return {Initiator.BUYER: 1, Initiator.SELLER: -1}.get(self, 0)


@dataclass(frozen=True)
class Transaction:
    """One on-book trade seen from a member's side"""

    timestamp: float
    member_id: str
    sign: int
    shares: int
    price: float
    best_bid: Optional[float] = None
    best_ask: Optional[float] = None
    prev_price: Optional[float] = None

    def __post_init__(self) -> None:
        if self.sign not in (1, -1):
            raise DomainError(f"sign must be +1 or -1, got {self.sign}")
        if self.shares <= 0:
            raise DomainError(f"shares must be positive, got {self.shares}")
        if not self.price > 0:
            raise DomainError(f"price must be positive, got {self.price}")
        if (
            self.best_bid is not None
            and self.best_ask is not None
            and not self.best_bid < self.best_ask
        ):
            raise DomainError(f"bid {self.best_bid} must be below ask {self.best_ask}")

    @property
    def euro_volume(self) -> float:
        return self.shares * self.price


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= MIDQUOTE_TOLERANCE * max(abs(a), abs(b))


def classify_initiator(tx: Transaction) -> Initiator:
    """Lee-Ready: quote rule against the midquote, tick test at the midquote

    No quote-delay adjustment is applied; quotes are taken as prevailing at the
    trade time.
    """
    if tx.best_bid is not None and tx.best_ask is not None:
        mid = 0.5 * (tx.best_bid + tx.best_ask)
        if not _close(tx.price, mid):
            return Initiator.BUYER if tx.price > mid else Initiator.SELLER
    if tx.prev_price is None or _close(tx.price, tx.prev_price):
        return Initiator.UNCLASSIFIED
    return Initiator.BUYER if tx.price > tx.prev_price else Initiator.SELLER


def classify_tape(
    prices: np.ndarray,
    bids: np.ndarray,
    asks: np.ndarray,
    prev_prices: np.ndarray,
) -> np.ndarray:
    """Vectorized Lee-Ready; +1 buyer, -1 seller, 0 unclassified (NaN = absent)"""
    prices = np.asarray(prices, dtype=np.float64)
    mids = 0.5 * (np.asarray(bids, dtype=np.float64) + np.asarray(asks, dtype=np.float64))
    prev_prices = np.asarray(prev_prices, dtype=np.float64)

    with np.errstate(invalid="ignore"):
        tol = MIDQUOTE_TOLERANCE * np.maximum(np.abs(prices), np.abs(mids))
        quoted = np.isfinite(mids) & (np.abs(prices - mids) > tol)
        side = np.where(quoted, np.sign(prices - mids), 0)

        tick_tol = MIDQUOTE_TOLERANCE * np.maximum(np.abs(prices), np.abs(prev_prices))
        ticked = np.isfinite(prev_prices) & (np.abs(prices - prev_prices) > tick_tol)
        tick_side = np.where(ticked, np.sign(prices - prev_prices), 0)

    return np.where(quoted, side, tick_side).astype(np.int64)


def previous_distinct_prices(prices: np.ndarray) -> np.ndarray:
    """Most recent earlier price that differs from the current one (NaN if none)"""
    prices = np.asarray(prices, dtype=np.float64)
    result = np.full(prices.size, np.nan)
    if prices.size == 0:
        return result
    change = np.concatenate(([True], prices[1:] != prices[:-1]))
    run_starts = np.flatnonzero(change)
    run_of = np.cumsum(change) - 1
    start = run_starts[run_of]
    has_prev = start > 0
    result[has_prev] = prices[start[has_prev] - 1]
    return result


@dataclass(frozen=True, eq=False)
class TradingCalendar:
    """Ordered, disjoint trading sessions; holidays are simply absent"""

    opens: np.ndarray
    closes: np.ndarray
    dates: Tuple[date, ...] = ()

    def __post_init__(self) -> None:
        opens = np.array(self.opens, dtype=np.float64)
        closes = np.array(self.closes, dtype=np.float64)
        if opens.ndim != 1 or opens.shape != closes.shape or opens.size == 0:
            raise DomainError("Calendar needs at least one session with matching open/close")
        if np.any(opens >= closes):
            raise DomainError("Every session must open before it closes")
        if np.any(opens[1:] <= closes[:-1]):
            raise DomainError("Sessions must be ordered and disjoint")
        dates = tuple(self.dates) or tuple(
            datetime.fromtimestamp(t, tz=timezone.utc).date() for t in opens
        )
        if len(dates) != opens.size:
            raise DomainError("One date per session is required")
        opens.setflags(write=False)
        closes.setflags(write=False)
        before = np.concatenate(([0.0], np.cumsum(closes - opens)[:-1]))
        before.setflags(write=False)
        object.__setattr__(self, "opens", opens)
        object.__setattr__(self, "closes", closes)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "_before", before)

    @property
    def num_sessions(self) -> int:
        return self.opens.size

    @classmethod
    def from_entries(cls, entries: Sequence[Dict[str, str]], tz: str = "UTC") -> "TradingCalendar":
        """Build from [{"date": "YYYY-MM-DD", "open": "HH:MM", "close": "HH:MM"}, ...]"""
        opens, closes, dates = [], [], []
        for position, entry in enumerate(entries):
            try:
                day = date.fromisoformat(entry["date"])
                opened = pd.Timestamp(f"{entry['date']} {entry['open']}").tz_localize(tz)
                closed = pd.Timestamp(f"{entry['date']} {entry['close']}").tz_localize(tz)
            except (KeyError, TypeError, ValueError) as e:
                raise DataError(f"Calendar entry {position} is malformed: {e}") from e
            opens.append((opened - EPOCH).total_seconds())
            closes.append((closed - EPOCH).total_seconds())
            dates.append(day)
        order = np.argsort(opens, kind="stable")
        return cls(
            opens=np.asarray(opens)[order],
            closes=np.asarray(closes)[order],
            dates=tuple(dates[i] for i in order),
        )

    @classmethod
    def weekdays(
        cls,
        start: date,
        end: date,
        open_time: str = "09:00",
        close_time: str = "17:30",
        tz: str = "UTC",
        holidays: Sequence[date] = (),
    ) -> "TradingCalendar":
        """Monday-Friday sessions from start to end inclusive, minus holidays"""
        skip = set(holidays)
        entries = []
        day = start
        while day <= end:
            if day.weekday() < 5 and day not in skip:
                entries.append({"date": day.isoformat(), "open": open_time, "close": close_time})
            day += timedelta(days=1)
        return cls.from_entries(entries, tz)

    def session_index(self, times: np.ndarray) -> np.ndarray:
        """Index of the session holding each instant, -1 outside all sessions"""
        times = np.asarray(times, dtype=np.float64)
        idx = np.searchsorted(self.opens, times, side="right") - 1
        # closed on the right: a trade stamped exactly at the close is in that session
        inside = (idx >= 0) & (times <= self.closes[np.maximum(idx, 0)])
        return np.where(inside, idx, -1)

    def trading_clock(self, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Trading seconds elapsed since the first open, with a clamped-instant mask

        Instants before the first session map to 0; instants in a closed gap map
        to the preceding close.
        """
        times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        idx = np.searchsorted(self.opens, times, side="right") - 1
        safe = np.maximum(idx, 0)
        within = np.clip(times - self.opens[safe], 0.0, self.closes[safe] - self.opens[safe])
        clock = np.where(idx >= 0, self._before[safe] + within, 0.0)
        clamped = (idx < 0) | (times > self.closes[safe])
        return clock, clamped

    def period_of(self, session: np.ndarray) -> np.ndarray:
        """Calendar year of each session index"""
        years = np.array([d.year for d in self.dates], dtype=np.int64)
        return years[np.asarray(session)]


def trading_time_elapsed(
    calendar: TradingCalendar, t_start: float, t_end: float
) -> Tuple[float, bool]:
    """Within-session seconds between two instants

    Returns:
        (seconds, clamped): clamped is True when either instant lay outside all
        sessions and was moved to the nearest session boundary

    Raises:
        DomainError: t_start > t_end
    """
    if t_start > t_end:
        raise DomainError(f"t_start {t_start} is after t_end {t_end}")
    clock, clamped = calendar.trading_clock(np.array([t_start, t_end]))
    if clamped.any():
        logger.warning(f"Instants outside trading sessions clamped: {t_start}, {t_end}")
    return float(clock[1] - clock[0]), bool(clamped.any())


def load_calendar(path: Path, tz: str = "UTC") -> TradingCalendar:
    try:
        with open(path, encoding="utf-8") as handle:
            entries = json.load(handle)
    except json.JSONDecodeError as e:
        raise DataError(f"Calendar {path} is not valid JSON: {e}") from e
    if not isinstance(entries, list):
        raise DataError(f"Calendar {path} must be a JSON list of sessions")
    calendar = TradingCalendar.from_entries(entries, tz)
    logger.info(f"Loaded calendar {path}: {calendar.num_sessions} sessions")
    return calendar


@dataclass
class LoadReport:
    rows_read: int = 0
    rows_loaded: int = 0
    rejected: List[Tuple[int, str]] = field(default_factory=list)
    reordered: int = 0

    @property
    def rows_rejected(self) -> int:
        return len(self.rejected)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows_read": self.rows_read,
            "rows_loaded": self.rows_loaded,
            "rows_rejected": self.rows_rejected,
            "reordered": self.reordered,
            "rejected": [{"line": line, "reason": reason} for line, reason in self.rejected],
        }


TAPE_COLUMNS = [
    "timestamp", "member_id", "sign", "shares", "price", "bid", "ask",
    "prev_price", "euro_volume", "initiator", "session", "period",
]


@dataclass(frozen=True, eq=False)
class MarketTape:
    """Time-ordered transactions of one stock across all members

    frame columns: timestamp, member_id, sign, shares, price, bid, ask,
    prev_price, euro_volume, initiator (+1/-1/0), session, period.
    """

    frame: pd.DataFrame
    calendar: TradingCalendar
    both_sides_feed: bool = False
    report: LoadReport = field(default_factory=LoadReport)

    def __post_init__(self) -> None:
        times = self.frame["timestamp"].to_numpy(dtype=np.float64)
        if np.any(np.diff(times) < 0):
            raise DomainError("Tape timestamps must be non-decreasing")
        if np.any(self.calendar.session_index(times) < 0):
            raise DomainError("Tape holds transactions outside trading sessions")
        volume_times, volumes = _market_volume_events(self.frame, self.both_sides_feed)
        cumulative = np.concatenate(([0.0], np.cumsum(volumes)))
        object.__setattr__(self, "_volume_times", volume_times)
        object.__setattr__(self, "_cumulative", cumulative)

    def __len__(self) -> int:
        return len(self.frame)

    def member_ids(self) -> List[str]:
        return sorted(self.frame["member_id"].unique().tolist())

    def member_transactions(self, member_id: str, period: Optional[int] = None) -> pd.DataFrame:
        """Rows of one member (optionally one period) in tape order"""
        mask = self.frame["member_id"] == member_id
        if period is not None:
            mask &= self.frame["period"] == period
        return self.frame.loc[mask].reset_index(drop=True)

    def transaction(self, row: int) -> Transaction:
        record = self.frame.iloc[row]
        return Transaction(
            timestamp=float(record["timestamp"]),
            member_id=str(record["member_id"]),
            sign=int(record["sign"]),
            shares=int(record["shares"]),
            price=float(record["price"]),
            best_bid=None if pd.isna(record["bid"]) else float(record["bid"]),
            best_ask=None if pd.isna(record["ask"]) else float(record["ask"]),
            prev_price=None if pd.isna(record["prev_price"]) else float(record["prev_price"]),
        )


def _market_volume_events(frame: pd.DataFrame, both_sides_feed: bool) -> Tuple[np.ndarray, np.ndarray]:
    if frame.empty:
        return np.zeros(0), np.zeros(0)
    if not both_sides_feed:
        return (
            frame["timestamp"].to_numpy(dtype=np.float64),
            frame["euro_volume"].to_numpy(dtype=np.float64),
        )
    # a matched trade between two listed members appears as a buy and a sell record
    keyed = frame.assign(
        buys=(frame["sign"] > 0).astype(np.int64), sells=(frame["sign"] < 0).astype(np.int64)
    )
    grouped = keyed.groupby(["timestamp", "price", "shares"], sort=True)[["buys", "sells"]].sum()
    trades = np.maximum(grouped["buys"], grouped["sells"]).to_numpy(dtype=np.float64)
    prices = grouped.index.get_level_values("price").to_numpy(dtype=np.float64)
    shares = grouped.index.get_level_values("shares").to_numpy(dtype=np.float64)
    times = grouped.index.get_level_values("timestamp").to_numpy(dtype=np.float64)
    return times, trades * prices * shares


def market_volume_between(tape: MarketTape, t_start: float, t_end: float) -> float:
    """Euro volume of all tape trades with timestamp in [t_start, t_end]"""
    if t_start > t_end:
        raise DomainError(f"t_start {t_start} is after t_end {t_end}")
    lo = np.searchsorted(tape._volume_times, t_start, side="left")
    hi = np.searchsorted(tape._volume_times, t_end, side="right")
    return float(tape._cumulative[hi] - tape._cumulative[lo])


def market_volumes_between(tape: MarketTape, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Vectorized market_volume_between over interval arrays"""
    lo = np.searchsorted(tape._volume_times, np.asarray(starts, dtype=np.float64), side="left")
    hi = np.searchsorted(tape._volume_times, np.asarray(ends, dtype=np.float64), side="right")
    return tape._cumulative[hi] - tape._cumulative[lo]


def _parse_timestamps(raw: pd.Series, tz: str) -> pd.Series:
    """Epoch seconds per row; NaN where the text is not a valid ISO-8601 instant

    Rows with an explicit offset keep it (offsets may differ row to row); naive
    rows are read as exchange-local time in `tz`.
    """
    text = raw.astype(str).str.strip()
    has_offset = text.str.contains(OFFSET_SUFFIX, regex=True)
    seconds = pd.Series(np.nan, index=raw.index, dtype=np.float64)
    if has_offset.any():
        aware = pd.to_datetime(text[has_offset], errors="coerce", format="ISO8601", utc=True)
        seconds[has_offset] = (aware - EPOCH) / pd.Timedelta(seconds=1)
    if (~has_offset).any():
        naive = pd.to_datetime(text[~has_offset], errors="coerce", format="ISO8601")
        local = naive.dt.tz_localize(tz, ambiguous="NaT", nonexistent="NaT")
        seconds[~has_offset] = (local.dt.tz_convert("UTC") - EPOCH) / pd.Timedelta(seconds=1)
    return seconds


def load_transactions(
    path: Path, schema: SchemaConfig, calendar: TradingCalendar
) -> MarketTape:
    """Parse, validate and time-order a transactions CSV

    Args:
        path: CSV file with a header row
        schema: Column names and validation policy
        calendar: Trading sessions; rows outside every session are rejected

    Returns:
        MarketTape with its LoadReport attached

    Raises:
        DataError: missing required column, or more than
            schema.max_malformed_fraction of the rows rejected
    """
    path = Path(path)
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    required = [schema.timestamp, schema.member_id, schema.sign, schema.shares, schema.price]
    missing = [column for column in required if column not in raw.columns]
    if missing:
        raise DataError(f"{path}: missing required column(s) {missing}")

    report = LoadReport(rows_read=len(raw))
    lines = raw.index.to_numpy() + 2
    reasons = pd.Series("", index=raw.index, dtype=object)

    def reject(mask: pd.Series, reason: str) -> None:
        fresh = mask & (reasons == "")
        reasons[fresh] = reason

    def optional(column: str) -> pd.Series:
        if column not in raw.columns:
            return pd.Series(np.nan, index=raw.index)
        return pd.to_numeric(raw[column].replace("", np.nan), errors="coerce")

    timestamps = _parse_timestamps(raw[schema.timestamp], schema.timezone)
    members = raw[schema.member_id].str.strip()
    signs = pd.to_numeric(raw[schema.sign], errors="coerce")
    shares = pd.to_numeric(raw[schema.shares], errors="coerce")
    prices = pd.to_numeric(raw[schema.price], errors="coerce")
    bids = optional(schema.bid)
    asks = optional(schema.ask)

    reject(timestamps.isna(), "unparseable timestamp")
    reject(members == "", "empty member_id")
    reject(~signs.isin([1, -1]), "sign must be +1 or -1")
    reject(shares.isna() | (shares != np.floor(shares)), "shares must be an integer")
    reject(~(shares > 0), "shares must be positive")
    reject(~(prices > 0), "price must be positive")
    both_quotes = bids.notna() & asks.notna()
    reject(both_quotes & ~(bids < asks), "bid must be below ask")
    reject((bids.notna() & ~(bids > 0)) | (asks.notna() & ~(asks > 0)), "quotes must be positive")
    sessions = pd.Series(-1, index=raw.index)
    valid_time = timestamps.notna()
    sessions[valid_time] = calendar.session_index(timestamps[valid_time].to_numpy())
    reject(valid_time & (sessions < 0), "outside trading sessions")

    bad = reasons != ""
    report.rejected = [(int(lines[i]), reasons.iloc[i]) for i in np.flatnonzero(bad.to_numpy())]
    for line, reason in report.rejected[:20]:
        logger.warning(f"{path.name} line {line}: {reason}")
    if report.rows_read and report.rows_rejected / report.rows_read > schema.max_malformed_fraction:
        raise DataError(
            f"{path}: {report.rows_rejected} of {report.rows_read} rows malformed, above the "
            f"{schema.max_malformed_fraction:.3%} limit (first: {report.rejected[:3]})"
        )

    keep = ~bad
    frame = pd.DataFrame(
        {
            "timestamp": timestamps[keep].to_numpy(dtype=np.float64),
            "member_id": members[keep].to_numpy(dtype=object),
            "sign": signs[keep].to_numpy(dtype=np.int64),
            "shares": shares[keep].to_numpy(dtype=np.int64),
            "price": prices[keep].to_numpy(dtype=np.float64),
            "bid": bids[keep].to_numpy(dtype=np.float64),
            "ask": asks[keep].to_numpy(dtype=np.float64),
            "session": sessions[keep].to_numpy(dtype=np.int64),
        }
    )
    order = np.argsort(frame["timestamp"].to_numpy(), kind="stable")
    report.reordered = int(np.count_nonzero(order != np.arange(order.size)))
    if report.reordered:
        logger.warning(f"{path.name}: {report.reordered} rows out of time order, stable-sorted")
    frame = frame.iloc[order].reset_index(drop=True)

    frame["prev_price"] = previous_distinct_prices(frame["price"].to_numpy())
    frame["euro_volume"] = frame["shares"] * frame["price"]
    frame["initiator"] = classify_tape(
        frame["price"].to_numpy(), frame["bid"].to_numpy(),
        frame["ask"].to_numpy(), frame["prev_price"].to_numpy(),
    )
    frame["period"] = calendar.period_of(frame["session"].to_numpy())
    report.rows_loaded = len(frame)
    logger.info(
        f"Loaded {path}: {report.rows_loaded} transactions, {report.rows_rejected} rejected"
    )
    return MarketTape(
        frame=frame[TAPE_COLUMNS],
        calendar=calendar,
        both_sides_feed=schema.both_sides_feed,
        report=report,
    )


def daily_closes(tape: MarketTape) -> pd.Series:
    """Last trade price of every session that traded, indexed by session date"""
    last = tape.frame.groupby("session", sort=True)["price"].last()
    index = pd.DatetimeIndex([pd.Timestamp(tape.calendar.dates[i]) for i in last.index])
    return pd.Series(last.to_numpy(), index=index, name="close")


def member_periods(tape: MarketTape) -> pd.DataFrame:
    """Transactions and active trading days per member and calendar year"""
    grouped = tape.frame.groupby(["member_id", "period"], sort=True)
    summary = grouped.agg(
        transactions=("timestamp", "size"), active_days=("session", "nunique")
    ).reset_index()
    return summary
