"""
Patches

Turns a decoded state path into labeled buy / neutral / sell patches (maximal
runs of one state) and computes the per-patch metrics: counts, euro volumes,
trading-time duration, fraction of market orders and participation rate.
"""

import logging
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DataError, DomainError
from .trades import MarketTape, market_volumes_between

logger = logging.getLogger(__name__)

DEFAULT_MIN_LENGTH = 10


class Label(str, Enum):
    BUY = "buy"
    NEUTRAL = "neutral"
    SELL = "sell"

    @property
    def directional(self) -> bool:
        return self is not Label.NEUTRAL


@dataclass(frozen=True, eq=False)
class StateLabeling:
    """Buy / Neutral / Sell name of every state of a 3-state sign model"""

    labels: Tuple[Label, ...]
    buy_emission: np.ndarray
    # two states had exactly equal buy emission; ranking fell back to index
    ambiguous: bool = False

    def state_of(self, label: Label) -> int:
        return self.labels.index(label)

    @property
    def order(self) -> List[int]:
        """State indices in Buy, Neutral, Sell order"""
        return [self.state_of(label) for label in (Label.BUY, Label.NEUTRAL, Label.SELL)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "labels": [label.value for label in self.labels],
            "buy_emission": self.buy_emission.tolist(),
            "ambiguous": self.ambiguous,
        }


def label_states(model: Any) -> StateLabeling:
    """Rank states by buy-emission probability: highest Buy, lowest Sell

    Works for any model exposing an (N, 2) emission matrix with symbol 1 = buy.

    Raises:
        DomainError: model is not 3-state with 2 symbols
    """
    emission = np.asarray(model.emission)
    if emission.shape != (3, 2):
        raise DomainError(
            f"Labeling needs a 3-state, 2-symbol model, got emission shape {emission.shape}"
        )
    buy = emission[:, 1].copy()
    ranked = sorted(range(3), key=lambda state: (-buy[state], state))
    labels: List[Label] = [Label.NEUTRAL] * 3
    for label, state in zip((Label.BUY, Label.NEUTRAL, Label.SELL), ranked):
        labels[state] = label
    ambiguous = np.unique(buy).size < 3
    if ambiguous:
        logger.warning(f"State labeling is ambiguous: buy emissions {buy.tolist()}")
    return StateLabeling(labels=tuple(labels), buy_emission=buy, ambiguous=ambiguous)


def pooled_parameter_summary(
    models: Sequence[Any], labelings: Sequence[StateLabeling]
) -> Dict[str, Any]:
    """Mean and sd of buy emissions and transitions across fits, in B/N/S order"""
    if not models or len(models) != len(labelings):
        raise DomainError("Need one labeling per model and at least one model")
    buys = []
    transitions = []
    for model, labeling in zip(models, labelings):
        order = labeling.order
        buys.append(np.asarray(model.emission)[order, 1])
        transitions.append(np.asarray(model.transition)[np.ix_(order, order)])
    buys = np.array(buys)
    transitions = np.array(transitions)
    ddof = 1 if len(models) > 1 else 0
    return {
        "count": len(models),
        "state_order": [label.value for label in (Label.BUY, Label.NEUTRAL, Label.SELL)],
        "buy_emission_mean": buys.mean(axis=0).tolist(),
        "buy_emission_sd": buys.std(axis=0, ddof=ddof).tolist(),
        "transition_mean": transitions.mean(axis=0).tolist(),
        "transition_sd": transitions.std(axis=0, ddof=ddof).tolist(),
    }


@dataclass(frozen=True)
class Patch:
    """A maximal run of one decoded state in a member's transaction sequence"""

    member_id: str
    period: int
    label: Label
    state: int
    first_index: int
    last_index: int
    t_first: float
    t_last: float
    duration_T: float
    N_buy: int
    N_sell: int
    N_tot: int
    V_buy: float
    V_sell: float
    V_tot: float
    buy_volume_ratio: float
    market_order_count: int
    # NaN when none of the patch's trades could be classified
    market_order_fraction: float
    participation_rate: float

    @property
    def length(self) -> int:
        return self.N_tot


PATCH_COLUMNS = [f.name for f in fields(Patch)]


def state_runs(path: Sequence[int] | np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run-length encode a path into (first_index, last_index, state) arrays"""
    path = np.asarray(path)
    if path.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    change = np.flatnonzero(np.diff(path) != 0) + 1
    starts = np.concatenate(([0], change)).astype(np.int64)
    ends = np.concatenate((change - 1, [path.size - 1])).astype(np.int64)
    return starts, ends, path[starts].astype(np.int64)


def extract_patches(
    path: Sequence[int] | np.ndarray,
    labeling: StateLabeling,
    member_txs: pd.DataFrame,
    tape: MarketTape,
    index_offset: int = 0,
) -> List[Patch]:
    """Patches of one member with every metric filled in

    Args:
        path: Decoded state per member transaction
        labeling: State names
        member_txs: The member's tape rows, time-ordered (see MarketTape.frame)
        tape: Full market tape for calendar and market volume
        index_offset: Position of member_txs' first row in the member's full
            transaction sequence (first_index and last_index include it)

    Returns:
        Patches in sequence order; together they cover every transaction once

    Raises:
        DomainError: path length differs from the transaction count, or the rows
            span more than one member
    """
    path = np.asarray(path)
    if path.size != len(member_txs):
        raise DomainError(
            f"Path length {path.size} does not match {len(member_txs)} member transactions"
        )
    if path.size == 0:
        return []
    members = member_txs["member_id"].unique()
    if members.size != 1:
        raise DomainError(f"Expected transactions of one member, got {members.size}")
    member_id = str(members[0])

    times = member_txs["timestamp"].to_numpy(dtype=np.float64)
    if np.any(np.diff(times) < 0):
        raise DomainError("Member transactions must be time-ordered")
    signs = member_txs["sign"].to_numpy()
    volume = member_txs["euro_volume"].to_numpy(dtype=np.float64)
    initiator = member_txs["initiator"].to_numpy()
    periods = member_txs["period"].to_numpy()

    starts, ends, states = state_runs(path)
    is_buy = signs > 0
    n_buy = np.add.reduceat(is_buy.astype(np.int64), starts)
    n_tot = ends - starts + 1
    v_buy = np.add.reduceat(np.where(is_buy, volume, 0.0), starts)
    v_sell = np.add.reduceat(np.where(is_buy, 0.0, volume), starts)
    v_tot = v_buy + v_sell
    market = np.add.reduceat((initiator == signs).astype(np.int64), starts)
    classified = np.add.reduceat((initiator != 0).astype(np.int64), starts)

    t_first = times[starts]
    t_last = times[ends]
    clock, clamped = tape.calendar.trading_clock(np.concatenate((t_first, t_last)))
    if clamped.any():
        logger.warning(f"Member {member_id}: patch endpoints outside sessions were clamped")
    duration = clock[starts.size :] - clock[: starts.size]
    market_volume = market_volumes_between(tape, t_first, t_last)
    participation = v_tot / np.maximum(market_volume, v_tot)

    with np.errstate(invalid="ignore", divide="ignore"):
        fraction = np.where(classified > 0, market / np.maximum(classified, 1), np.nan)
        ratio = np.where(v_tot > 0, v_buy / v_tot, np.nan)

    patches = []
    for i in range(starts.size):
        patches.append(
            Patch(
                member_id=member_id,
                period=int(periods[starts[i]]),
                label=labeling.labels[int(states[i])],
                state=int(states[i]),
                first_index=int(starts[i]) + index_offset,
                last_index=int(ends[i]) + index_offset,
                t_first=float(t_first[i]),
                t_last=float(t_last[i]),
                duration_T=float(duration[i]),
                N_buy=int(n_buy[i]),
                N_sell=int(n_tot[i] - n_buy[i]),
                N_tot=int(n_tot[i]),
                V_buy=float(v_buy[i]),
                V_sell=float(v_sell[i]),
                V_tot=float(v_tot[i]),
                buy_volume_ratio=float(ratio[i]),
                market_order_count=int(market[i]),
                market_order_fraction=float(fraction[i]),
                participation_rate=float(participation[i]),
            )
        )
    logger.debug(f"Member {member_id}: {len(patches)} patches from {path.size} transactions")
    return patches


def filter_min_length(patches: Sequence[Patch], n_min: int = DEFAULT_MIN_LENGTH) -> List[Patch]:
    """Keep patches with at least n_min transactions"""
    if n_min <= 0:
        logger.warning(f"n_min = {n_min} keeps every patch")
        return list(patches)
    return [patch for patch in patches if patch.N_tot >= n_min]


def patches_to_frame(patches: Sequence[Patch]) -> pd.DataFrame:
    """One row per patch, ordered by member then t_first"""
    rows = [asdict(patch) for patch in patches]
    frame = pd.DataFrame(rows, columns=PATCH_COLUMNS)
    frame["label"] = frame["label"].map(lambda label: Label(label).value)
    return frame.sort_values(["member_id", "t_first", "first_index"], kind="stable").reset_index(
        drop=True
    )


def frame_to_patches(frame: pd.DataFrame) -> List[Patch]:
    missing = [column for column in PATCH_COLUMNS if column not in frame.columns]
    if missing:
        raise DataError(f"Patch table missing column(s) {missing}")
    patches = []
    for record in frame[PATCH_COLUMNS].to_dict(orient="records"):
        record["label"] = Label(record["label"])
        record["member_id"] = str(record["member_id"])
        for name in ("period", "state", "first_index", "last_index", "N_buy", "N_sell",
                     "N_tot", "market_order_count"):
            record[name] = int(record[name])
        patches.append(Patch(**record))
    return patches


def write_csv_atomic(frame: pd.DataFrame, path: Path) -> None:
    """Write a CSV next to the target and rename into place"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            frame.to_csv(handle, index=False, float_format="%.12g")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_patches_csv(patches: Sequence[Patch], path: Path) -> None:
    write_csv_atomic(patches_to_frame(patches), path)
    logger.info(f"Wrote {len(patches)} patches to {path}")


def read_patches_csv(path: Path) -> List[Patch]:
    frame = pd.read_csv(path, dtype={"member_id": str})
    return frame_to_patches(frame)
