"""
Segment Comparison

Cross-tabulates HMM patches against an externally supplied coarse
segmentation of the same members' transaction sequences: how many HMM
patches, and how many transactions, of each decoded label sit inside a
buy / neutral / sell segment, binned by segment size.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, DomainError
from .patches import Label, Patch

logger = logging.getLogger(__name__)

SEGMENT_COLUMNS = ["member_id", "type", "first_index", "last_index"]
TABLE_COLUMNS = [
    "segment_type", "hmm_state", "nseg_bin", "mean_patch_count", "mean_tx_count", "n_segments",
]
LABELS = (Label.BUY, Label.NEUTRAL, Label.SELL)


@dataclass(frozen=True)
class SegmentPatch:
    member_id: str
    type: Label
    first_index: int
    last_index: int

    def __post_init__(self) -> None:
        if self.first_index < 0 or self.last_index < self.first_index:
            raise DomainError(
                f"Segment of {self.member_id} has invalid bounds "
                f"[{self.first_index}, {self.last_index}]"
            )

    @property
    def n_seg(self) -> int:
        return self.last_index - self.first_index + 1


def _check_disjoint(segments: Sequence[SegmentPatch]) -> None:
    by_member: Dict[str, List[SegmentPatch]] = {}
    for segment in segments:
        by_member.setdefault(segment.member_id, []).append(segment)
    for member, items in by_member.items():
        for previous, current in zip(items, items[1:]):
            if current.first_index <= previous.last_index:
                raise DataError(f"Segments of member {member} overlap or are out of order")


def load_segments(path: Path) -> List[SegmentPatch]:
    """Read a segment CSV (member_id, type, first_index, last_index)"""
    frame = pd.read_csv(path, dtype={"member_id": str, "type": str})
    missing = [column for column in SEGMENT_COLUMNS if column not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing segment column(s) {missing}")
    segments = []
    for line, record in enumerate(frame[SEGMENT_COLUMNS].to_dict(orient="records"), start=2):
        try:
            segments.append(
                SegmentPatch(
                    member_id=str(record["member_id"]),
                    type=Label(str(record["type"]).strip().lower()),
                    first_index=int(record["first_index"]),
                    last_index=int(record["last_index"]),
                )
            )
        except (ValueError, DomainError) as e:
            raise DataError(f"{path} line {line}: {e}") from e
    _check_disjoint(segments)
    logger.info(f"Loaded {len(segments)} segments from {path}")
    return segments


def _member_patches(hmm_patches: Sequence[Patch]) -> Dict[str, pd.DataFrame]:
    frame = pd.DataFrame(
        {
            "member_id": [p.member_id for p in hmm_patches],
            "label": [p.label.value for p in hmm_patches],
            "first_index": [p.first_index for p in hmm_patches],
            "last_index": [p.last_index for p in hmm_patches],
        }
    )
    result = {}
    for member, group in frame.groupby("member_id", sort=True):
        group = group.sort_values("first_index").reset_index(drop=True)
        expected = np.concatenate(([0], group["last_index"].to_numpy()[:-1] + 1))
        if group["first_index"].iloc[0] != 0 or np.any(group["first_index"].to_numpy() != expected):
            raise DomainError(f"HMM patches of member {member} do not partition an index range")
        result[str(member)] = group
    return result


def segment_composition(
    hmm_patches: Sequence[Patch],
    segments: Sequence[SegmentPatch],
    assignment: Literal["midpoint", "first"] = "midpoint",
) -> pd.DataFrame:
    """Per-segment counts of contained HMM patches and transactions by label

    An HMM patch counts toward the segment holding its midpoint index (or its
    first index); transactions are attributed exactly by index.

    Raises:
        DomainError: a segment lies outside its member's HMM index range, or the
            member has no HMM patches
    """
    if assignment not in ("midpoint", "first"):
        raise DomainError(f"Unknown assignment {assignment!r}")
    patches_by_member = _member_patches(hmm_patches)
    rows = []
    for position, segment in enumerate(segments):
        patches = patches_by_member.get(segment.member_id)
        if patches is None:
            raise DomainError(f"No HMM patches for member {segment.member_id}")
        if segment.last_index > patches["last_index"].iloc[-1]:
            raise DomainError(
                f"Segment [{segment.first_index}, {segment.last_index}] of member "
                f"{segment.member_id} exceeds its {patches['last_index'].iloc[-1] + 1} transactions"
            )
        first = patches["first_index"].to_numpy()
        last = patches["last_index"].to_numpy()
        anchor = (first + last) // 2 if assignment == "midpoint" else first
        inside = (anchor >= segment.first_index) & (anchor <= segment.last_index)
        overlap = np.maximum(
            0, np.minimum(last, segment.last_index) - np.maximum(first, segment.first_index) + 1
        )
        row = {
            "member_id": segment.member_id,
            "segment": position,
            "segment_type": segment.type.value,
            "n_seg": segment.n_seg,
        }
        for label in LABELS:
            of_label = (patches["label"] == label.value).to_numpy()
            row[f"patches_{label.value}"] = int(np.count_nonzero(inside & of_label))
            row[f"tx_{label.value}"] = int(overlap[of_label].sum())
        rows.append(row)
    return pd.DataFrame(rows)


def nseg_bin(n_seg: np.ndarray) -> np.ndarray:
    """Power-of-two lower edge of each segment size"""
    return (2 ** np.floor(np.log2(np.asarray(n_seg, dtype=np.float64)))).astype(np.int64)


def cross_tabulate(
    hmm_patches: Sequence[Patch],
    segments: Sequence[SegmentPatch],
    assignment: Literal["midpoint", "first"] = "midpoint",
) -> pd.DataFrame:
    """Mean HMM patch and transaction counts by segment type, HMM label and N_seg bin

    Returns:
        Long-format table with columns segment_type, hmm_state, nseg_bin,
        mean_patch_count, mean_tx_count, n_segments
    """
    composition = segment_composition(hmm_patches, segments, assignment)
    if composition.empty:
        return pd.DataFrame(columns=TABLE_COLUMNS)
    composition["nseg_bin"] = nseg_bin(composition["n_seg"])
    grouped = composition.groupby(["segment_type", "nseg_bin"], sort=True)
    rows = []
    for (segment_type, size_bin), group in grouped:
        for label in LABELS:
            rows.append(
                {
                    "segment_type": segment_type,
                    "hmm_state": label.value,
                    "nseg_bin": int(size_bin),
                    "mean_patch_count": float(group[f"patches_{label.value}"].mean()),
                    "mean_tx_count": float(group[f"tx_{label.value}"].mean()),
                    "n_segments": int(len(group)),
                }
            )
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)
