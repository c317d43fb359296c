"""
Tests for report tables and the run directory writer
"""

import json

import numpy as np
import pandas as pd
import pytest

from hidden_order_hmm.errors import DataError
from hidden_order_hmm.patches import Label, label_states
from hidden_order_hmm.reporting import (
    RunDirectory,
    cumulative_sign_series,
    figure_tables,
    lognormality,
    method_comparison,
    package_versions,
    patch_summary,
    tail_exponents,
)
from hidden_order_hmm.synthgen import PatchGenConfig, sample_pareto_lengths

from .conftest import make_patch, three_state_generator


def pareto_patches(count: int, seed: int) -> list:
    lengths = sample_pareto_lengths(
        PatchGenConfig(min_length=10), count, np.random.default_rng(seed)
    )
    rng = np.random.default_rng(seed + 1)
    patches = []
    for i, n in enumerate(lengths):
        label = (Label.BUY, Label.SELL, Label.NEUTRAL)[i % 3]
        patches.append(
            make_patch(
                label=label,
                N_tot=int(n),
                duration_T=30.0 * n * rng.uniform(0.5, 1.5),
                V_tot=1000.0 * n * rng.uniform(0.5, 1.5),
                buy_volume_ratio=rng.uniform(),
                market_order_fraction=rng.uniform(),
                participation_rate=rng.uniform(0.01, 1.0),
            )
        )
    return patches


def test_patch_summary_counts():
    patches = [
        make_patch(label=Label.BUY, N_tot=20),
        make_patch(label=Label.BUY, N_tot=30),
        make_patch(label=Label.SELL, N_tot=5),
        make_patch(label=Label.NEUTRAL, N_tot=12),
    ]
    summary = patch_summary(patches, n_min=10).set_index("group")
    assert summary.loc["all", "patches"] == 4
    assert summary.loc["all", "transactions"] == 67
    assert summary.loc["all", "patches_min_length"] == 3
    assert summary.loc["directional", "patches"] == 3
    assert summary.loc["buy", "mean_length"] == 25.0
    assert summary.loc["buy", "sd_length"] == pytest.approx(np.std([20, 30], ddof=1))
    assert summary.loc["sell", "patches_min_length"] == 0
    assert np.isnan(summary.loc["sell", "mean_length_min"])


def test_tail_exponents_of_small_groups_carry_a_note():
    table = tail_exponents([make_patch(N_tot=n) for n in range(10, 40)])
    assert len(table) == 6
    assert table["exponent"].isna().all()
    assert (table["note"] != "").all()


def test_tail_exponents_of_pareto_lengths():
    table = tail_exponents(pareto_patches(6000, seed=1))
    row = table.set_index(["group", "metric"]).loc[("directional", "N_tot")]
    assert row["k"] == int(0.05 * row["n"])
    assert 0.7 <= row["exponent"] <= 1.3


def test_lognormality_rejects_pareto_lengths():
    table = lognormality(pareto_patches(3000, seed=2)).set_index(["group", "metric"])
    assert table.loc[("directional", "N_tot"), "reject_at_0_01"]
    few = lognormality([make_patch()] * 5)
    assert few["statistic"].isna().all()


def test_figure_tables():
    tables = figure_tables(pareto_patches(900, seed=3), n_min=10, num_bins=10)
    assert {"t_ccdf", "n_tot_ccdf", "v_tot_ccdf", "vbuy_ratio_pdf", "participation_vs_length"} <= set(tables)
    pdf = tables["vbuy_ratio_pdf"]
    assert set(pdf["label"]) == {"buy", "neutral", "sell"}
    assert (pdf.groupby("label")["count"].sum() == 300).all()
    ccdf = tables["n_tot_ccdf"]
    assert set(ccdf["group"]) == {"directional", "neutral"}


def test_cumulative_sign_series():
    labeling = label_states(three_state_generator())
    member = pd.DataFrame({"sign": [1, 1, -1, -1, -1], "timestamp": np.arange(5.0)})
    series = cumulative_sign_series(member, np.array([0, 0, 2, 2, 1]), labeling)
    assert series["cumulative_sign"].tolist() == [1, 2, 1, 0, -1]
    assert series["label"].tolist() == ["buy", "buy", "sell", "sell", "neutral"]


def test_method_comparison_tables():
    ccdf, hill = method_comparison(
        {"hmm": pareto_patches(300, seed=4), "hsmm": pareto_patches(300, seed=5)}
    )
    assert len(hill) == 6
    assert set(ccdf["method"]) == {"hmm", "hsmm"}
    # 100 patches per label leave k = 5, below the Hill minimum
    assert hill["exponent"].isna().all()


class TestRunDirectory:
    def test_tables_and_manifest(self, tmp_path):
        out = RunDirectory(tmp_path / "run")
        out.write_table("a.csv", pd.DataFrame({"x": [1, 2, 3]}))
        out.write_tables({"b": pd.DataFrame({"y": [1]})}, prefix="figures/")
        out.write_failure("fit", DataError("boom"))
        assert (tmp_path / "run" / "FAILED.json").exists()

        out.write_manifest({"seed": 7}, "abc", 7)
        assert not (tmp_path / "run" / "FAILED.json").exists()
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["row_counts"] == {"a.csv": 3, "figures/b.csv": 1}
        assert manifest["config_hash"] == "abc"
        assert "numpy" in manifest["versions"]

    def test_failure_marker(self, tmp_path):
        out = RunDirectory(tmp_path)
        out.write_failure("load", DataError("bad row"), outputs=["z.csv", "a.csv"])
        failure = json.loads((tmp_path / "FAILED.json").read_text())
        assert failure["stage"] == "load"
        assert failure["error_type"] == "DataError"
        assert failure["outputs"] == ["a.csv", "z.csv"]
        assert not list(tmp_path.glob(".*.tmp"))


def test_package_versions_name_the_project():
    assert "hidden-order-hmm" in package_versions()
