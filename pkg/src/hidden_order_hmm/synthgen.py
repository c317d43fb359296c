"""
Synthetic Patch Generator

Labeled sign series built from biased Bernoulli blocks whose lengths follow a
discrete Pareto law, plus a fixture writer that dresses a generated series up
as a transactions CSV with a weekday trading calendar for end-to-end runs.
"""

import json
import logging
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import DomainError

logger = logging.getLogger(__name__)

MAX_TOTAL_LENGTH = 10**8
SESSION_OPEN = time(9, 0)
SESSION_CLOSE = time(17, 30)


class PatchGenConfig(BaseModel):
    """Patch-length law and within-patch bias of a synthetic series"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    num_patches: int = Field(5000, ge=1)
    pareto_exponent: float = Field(2.0, gt=1.0)
    min_length: int = Field(1, ge=1)
    # probability of the dominant sign inside a patch
    bias: float = Field(0.95, gt=0.5, le=1.0)
    seed: int = 0
    alternate_signs: bool = True


class FixtureConfig(BaseModel):
    """How a generated series is laid out as a transaction file"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    patches: PatchGenConfig = Field(default_factory=PatchGenConfig)
    member_id: str = "M001"
    start_date: date = date(2004, 1, 2)
    trade_spacing_seconds: float = Field(30.0, gt=0)
    price: float = Field(10.0, gt=0)
    price_volatility: float = Field(0.0005, ge=0)
    tick: float = Field(0.01, gt=0)
    shares: int = Field(100, ge=1)
    # chance that a trade executes at the member's own initiating side
    market_order_probability: float = Field(0.5, ge=0, le=1)
    # interleaved trades of other members, one every `background_every` slots
    background_member_id: str = "BG01"
    background_every: int = Field(0, ge=0)

    @field_validator("member_id", "background_member_id")
    @classmethod
    def _non_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("member ids must be non-empty")
        return value


def pareto_length_from_uniform(u, pareto_exponent: float, min_length: int) -> np.ndarray:
    """Inverse-CDF step: ceil(x_min * u^(-1/(mu-1))) for u in (0, 1]"""
    u = np.asarray(u, dtype=np.float64)
    if np.any((u <= 0.0) | (u > 1.0)):
        raise DomainError("Uniform draws must lie in (0, 1]")
    lengths = np.ceil(min_length * u ** (-1.0 / (pareto_exponent - 1.0)))
    return np.maximum(lengths, min_length).astype(np.int64)


def sample_pareto_length(config: PatchGenConfig, rng: np.random.Generator) -> int:
    # 1 - random() lies in (0, 1], so the power never divides by zero
    u = 1.0 - rng.random()
    return int(pareto_length_from_uniform(u, config.pareto_exponent, config.min_length))


def sample_pareto_lengths(
    config: PatchGenConfig, size: int, rng: np.random.Generator
) -> np.ndarray:
    u = 1.0 - rng.random(size)
    return pareto_length_from_uniform(u, config.pareto_exponent, config.min_length)


def generate_patched_series(config: PatchGenConfig) -> Tuple[np.ndarray, pd.DataFrame]:
    """Concatenate biased Bernoulli patches with Pareto lengths

    Args:
        config: Generator settings

    Returns:
        (symbols, ground_truth): symbols in {0 sell, 1 buy}; ground_truth has one
        row per patch with columns patch_id, dominant_sign, length, first_index

    Raises:
        DomainError: the drawn total length exceeds MAX_TOTAL_LENGTH
    """
    rng = np.random.default_rng(config.seed)
    lengths = sample_pareto_lengths(config, config.num_patches, rng)
    total = int(lengths.sum())
    if total > MAX_TOTAL_LENGTH:
        raise DomainError(
            f"Generated series would hold {total} symbols (limit {MAX_TOTAL_LENGTH}); "
            f"use fewer patches or a larger pareto_exponent"
        )

    first_sign = 1 if rng.random() < 0.5 else -1
    if config.alternate_signs:
        signs = first_sign * np.where(np.arange(config.num_patches) % 2 == 0, 1, -1)
    else:
        signs = np.full(config.num_patches, first_sign)

    dominant = np.repeat(signs, lengths)
    keep = rng.random(total) < config.bias
    series_signs = np.where(keep, dominant, -dominant)
    symbols = (series_signs > 0).astype(np.int64)

    first_index = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    truth = pd.DataFrame(
        {
            "patch_id": np.arange(config.num_patches, dtype=np.int64),
            "dominant_sign": signs.astype(np.int64),
            "length": lengths,
            "first_index": first_index.astype(np.int64),
        }
    )
    logger.info(
        f"Generated {config.num_patches} patches, {total} symbols "
        f"(mu={config.pareto_exponent}, bias={config.bias}, seed={config.seed})"
    )
    return symbols, truth


def _session_days(start: date, count: int):
    day = start
    produced = 0
    while produced < count:
        if day.weekday() < 5:
            yield day
            produced += 1
        day += timedelta(days=1)


def _session_bounds(day: date) -> Tuple[datetime, datetime]:
    return (
        datetime.combine(day, SESSION_OPEN, tzinfo=timezone.utc),
        datetime.combine(day, SESSION_CLOSE, tzinfo=timezone.utc),
    )


def _timestamps(start: date, count: int, spacing: float) -> Tuple[pd.Series, list]:
    """Evenly spaced in-session instants over consecutive weekdays"""
    opened, closed = _session_bounds(start)
    session_seconds = (closed - opened).total_seconds()
    per_day = int(session_seconds // spacing) + 1
    num_days = -(-count // per_day)
    days = list(_session_days(start, num_days))

    day_index = np.arange(count) // per_day
    offsets = (np.arange(count) % per_day) * spacing
    opens = pd.to_datetime(
        [datetime.combine(day, SESSION_OPEN, tzinfo=timezone.utc) for day in days]
    )
    stamps = opens[day_index] + pd.to_timedelta(offsets, unit="s")
    return pd.Series(stamps), days


def write_fixture(config: FixtureConfig, directory: Path) -> Dict[str, Path]:
    """Write transactions.csv, calendar.json and ground_truth.csv

    Trades of the generated member carry the series signs; at the quote the
    trade executes on the member's initiating side with probability
    market_order_probability. Background trades (if enabled) carry random
    signs and are excluded from the ground truth.

    Returns:
        Mapping of "transactions", "calendar", "ground_truth" to written paths
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    symbols, truth = generate_patched_series(config.patches)
    rng = np.random.default_rng(config.patches.seed + 1)

    member_count = symbols.size
    member_rows = np.arange(member_count)
    if config.background_every > 0:
        # one background row after every `background_every` member rows
        member_rows = member_rows + member_rows // config.background_every
    total = int(member_rows[-1]) + 1
    is_background = np.ones(total, dtype=bool)
    is_background[member_rows] = False

    signs = np.empty(total, dtype=np.int64)
    signs[~is_background] = np.where(symbols > 0, 1, -1)
    signs[is_background] = np.where(rng.random(int(is_background.sum())) < 0.5, 1, -1)

    log_steps = rng.normal(0.0, config.price_volatility, total)
    prices = np.round(config.price * np.exp(np.cumsum(log_steps)), 4)
    initiating = rng.random(total) < config.market_order_probability
    buyer_initiated = np.where(initiating, signs > 0, signs < 0)
    bids = np.where(buyer_initiated, prices - config.tick, prices)
    asks = np.where(buyer_initiated, prices, prices + config.tick)

    stamps, days = _timestamps(config.start_date, total, config.trade_spacing_seconds)
    frame = pd.DataFrame(
        {
            "timestamp": stamps.dt.strftime("%Y-%m-%dT%H:%M:%S.%f"),
            "member_id": np.where(
                is_background, config.background_member_id, config.member_id
            ),
            "sign": signs,
            "shares": config.shares,
            "price": prices,
            "bid": np.round(bids, 4),
            "ask": np.round(asks, 4),
        }
    )
    paths = {
        "transactions": directory / "transactions.csv",
        "calendar": directory / "calendar.json",
        "ground_truth": directory / "ground_truth.csv",
    }
    frame.to_csv(paths["transactions"], index=False)
    calendar = [
        {"date": day.isoformat(), "open": SESSION_OPEN.strftime("%H:%M"),
         "close": SESSION_CLOSE.strftime("%H:%M")}
        for day in days
    ]
    with open(paths["calendar"], "w", encoding="utf-8") as handle:
        json.dump(calendar, handle, indent=2)
    truth.to_csv(paths["ground_truth"], index=False)
    logger.info(f"Fixture written to {directory}: {total} trades over {len(days)} sessions")
    return paths


def planted_states(truth: pd.DataFrame, length: Optional[int] = None) -> np.ndarray:
    """Per-position dominant sign (+1/-1) expanded from a ground-truth table"""
    signs = np.repeat(truth["dominant_sign"].to_numpy(), truth["length"].to_numpy())
    return signs if length is None else signs[:length]
