"""
Tests for cross-tabulating HMM patches against a coarse segmentation
"""

import numpy as np
import pytest

from hidden_order_hmm.compare import (
    SegmentPatch,
    cross_tabulate,
    load_segments,
    nseg_bin,
    segment_composition,
)
from hidden_order_hmm.errors import DataError, DomainError
from hidden_order_hmm.patches import Label

from .conftest import make_patch


def hmm_patches():
    return [
        make_patch(label=Label.BUY, first_index=0, last_index=9),
        make_patch(label=Label.NEUTRAL, first_index=10, last_index=14),
        make_patch(label=Label.SELL, first_index=15, last_index=29),
    ]


def test_identity_partition():
    patches = hmm_patches()
    segments = [SegmentPatch("M001", p.label, p.first_index, p.last_index) for p in patches]
    composition = segment_composition(patches, segments)
    for _, row in composition.iterrows():
        own = row["segment_type"]
        assert row[f"patches_{own}"] == 1
        assert row[f"tx_{own}"] == row["n_seg"]
        others = [label.value for label in Label if label.value != own]
        assert all(row[f"patches_{o}"] == 0 and row[f"tx_{o}"] == 0 for o in others)


def test_segment_spanning_buy_and_neutral():
    segments = [SegmentPatch("M001", Label.BUY, 0, 14), SegmentPatch("M001", Label.SELL, 15, 29)]
    composition = segment_composition(hmm_patches(), segments)
    first = composition.iloc[0]
    assert (first["patches_buy"], first["patches_neutral"], first["patches_sell"]) == (1, 1, 0)
    assert (first["tx_buy"], first["tx_neutral"], first["tx_sell"]) == (10, 5, 0)

    table = cross_tabulate(hmm_patches(), segments)
    assert len(table) == 6
    row = table[(table["segment_type"] == "buy") & (table["hmm_state"] == "buy")].iloc[0]
    assert row["nseg_bin"] == 8
    assert row["mean_patch_count"] == 1.0
    assert row["mean_tx_count"] == 10.0


def test_first_index_assignment():
    segments = [SegmentPatch("M001", Label.BUY, 0, 12), SegmentPatch("M001", Label.SELL, 13, 29)]
    by_midpoint = segment_composition(hmm_patches(), segments, "midpoint")
    by_first = segment_composition(hmm_patches(), segments, "first")
    # the neutral patch 10..14 has midpoint 12 and first index 10
    assert by_midpoint.iloc[0]["patches_neutral"] == 1
    assert by_first.iloc[0]["patches_neutral"] == 1
    assert by_midpoint.iloc[0]["tx_neutral"] == 3
    assert by_midpoint.iloc[1]["tx_neutral"] == 2


def test_segment_beyond_member_range():
    with pytest.raises(DomainError):
        segment_composition(hmm_patches(), [SegmentPatch("M001", Label.BUY, 20, 40)])


def test_unknown_member():
    with pytest.raises(DomainError):
        segment_composition(hmm_patches(), [SegmentPatch("M999", Label.BUY, 0, 5)])


def test_patches_must_partition_the_sequence():
    gapped = [make_patch(first_index=0, last_index=9), make_patch(first_index=12, last_index=20)]
    with pytest.raises(DomainError):
        segment_composition(gapped, [SegmentPatch("M001", Label.BUY, 0, 5)])


def test_invalid_segment_bounds():
    with pytest.raises(DomainError):
        SegmentPatch("M001", Label.BUY, 5, 4)


def test_load_segments(fixtures_dir):
    segments = load_segments(fixtures_dir / "segments.csv")
    assert [s.type for s in segments] == [Label.BUY, Label.SELL, Label.NEUTRAL]
    assert segments[0].n_seg == 15


def test_load_segments_rejects_overlap(tmp_path):
    path = tmp_path / "segments.csv"
    path.write_text(
        "member_id,type,first_index,last_index\nM1,buy,0,10\nM1,sell,10,20\n", encoding="utf-8"
    )
    with pytest.raises(DataError):
        load_segments(path)


def test_load_segments_rejects_unknown_type(tmp_path):
    path = tmp_path / "segments.csv"
    path.write_text("member_id,type,first_index,last_index\nM1,long,0,10\n", encoding="utf-8")
    with pytest.raises(DataError):
        load_segments(path)


def test_nseg_bins_are_powers_of_two():
    np.testing.assert_array_equal(nseg_bin([1, 2, 3, 4, 1000]), [1, 2, 2, 4, 512])


def alternating_patches(long_label, start, blocks, rng):
    """Long directional HMM patches separated by short neutral ones"""
    patches = []
    index = start
    for _ in range(blocks):
        for label, length in (
            (long_label, int(rng.integers(40, 121))),
            (Label.NEUTRAL, int(rng.integers(3, 9))),
        ):
            patches.append(
                make_patch(label=label, first_index=index, last_index=index + length - 1)
            )
            index += length
    return patches


def test_directional_segments_are_made_of_long_same_direction_patches():
    rng = np.random.default_rng(31)
    buys = alternating_patches(Label.BUY, 0, 20, rng)
    sells = alternating_patches(Label.SELL, buys[-1].last_index + 1, 20, rng)
    segments = [
        SegmentPatch("M001", Label.BUY, 0, buys[-1].last_index),
        SegmentPatch("M001", Label.SELL, sells[0].first_index, sells[-1].last_index),
    ]
    composition = segment_composition(buys + sells, segments).set_index("segment_type")

    buy, sell = composition.loc["buy"], composition.loc["sell"]
    assert buy["tx_sell"] == 0 and sell["tx_buy"] == 0
    assert buy["tx_buy"] >= 0.85 * buy["n_seg"]
    assert sell["tx_sell"] >= 0.85 * sell["n_seg"]
    assert buy["patches_buy"] == buy["patches_neutral"] == 20
    assert buy["tx_buy"] + buy["tx_neutral"] == buy["n_seg"]
