"""
End-to-end tests for the pipeline and the command line
"""

import json
from pathlib import Path

import pandas as pd
import pytest

from hidden_order_hmm.cli import main
from hidden_order_hmm.config import InputPaths, MemberFilter, ModelSettings, RunConfig
from hidden_order_hmm.synthgen import FixtureConfig, PatchGenConfig, write_fixture
from hidden_order_hmm.tools import run_pipeline
from hidden_order_hmm.tools.common import load_tape
from hidden_order_hmm.tools.pipeline import eligible_members, member_tasks
from hidden_order_hmm.trades import member_periods


@pytest.fixture(scope="module")
def fixture_paths(tmp_path_factory):
    config = FixtureConfig(
        patches=PatchGenConfig(num_patches=60, min_length=5, seed=3), background_every=4
    )
    return write_fixture(config, tmp_path_factory.mktemp("fixture"))


def run_config(paths, output_dir, **overrides) -> RunConfig:
    values = dict(
        inputs=InputPaths(transactions=paths["transactions"], calendar=paths["calendar"]),
        member_filter=MemberFilter(min_transactions=50, min_active_days=1),
        model=ModelSettings(restarts=2, max_iterations=50),
        output_dir=output_dir,
    )
    values.update(overrides)
    return RunConfig(**values)


def test_member_filter_and_tasks(fixture_paths):
    tape = load_tape(fixture_paths["transactions"], fixture_paths["calendar"])
    members = eligible_members(tape, MemberFilter(min_transactions=50, min_active_days=1))
    assert members == ["BG01", "M001"]
    assert eligible_members(tape, MemberFilter(min_transactions=10**6)) == []
    tasks = member_tasks(tape, members, single_period=False)
    assert all(period is not None for _, period in tasks)
    assert member_tasks(tape, ["M001"], single_period=True) == [("M001", None)]


async def test_pipeline_writes_every_output(fixture_paths, tmp_path):
    result = await run_pipeline(run_config(fixture_paths, tmp_path))
    assert result["status"] == "success"
    assert result["exit_code"] == 0
    run_dir = Path(result["run_dir"])
    for name in ("patches.csv", "patch_summary.csv", "tail_exponents.csv", "lognormality.csv",
                 "fit_summary.json", "cumulative_sign.csv", "load_report.json", "manifest.json"):
        assert (run_dir / name).exists(), name
    assert not (run_dir / "FAILED.json").exists()

    patches = pd.read_csv(run_dir / "patches.csv", dtype={"member_id": str})
    truth = pd.read_csv(fixture_paths["ground_truth"])
    member = patches[patches["member_id"] == "M001"]
    assert member["N_tot"].sum() == truth["length"].sum()
    assert set(patches["label"]) <= {"buy", "neutral", "sell"}

    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["status"] == "success"
    assert manifest["row_counts"]["patches.csv"] == len(patches)
    summary = json.loads((run_dir / "fit_summary.json").read_text())
    assert summary["pooled"]["count"] == result["tasks"]


async def test_outputs_do_not_depend_on_worker_count(fixture_paths, tmp_path):
    one = await run_pipeline(run_config(fixture_paths, tmp_path / "one", workers=1))
    two = await run_pipeline(run_config(fixture_paths, tmp_path / "two", workers=2))
    assert one["status"] == two["status"] == "success"
    for name in ("patches.csv", "patch_summary.csv", "fit_summary.json"):
        first = (Path(one["run_dir"]) / name).read_bytes()
        second = (Path(two["run_dir"]) / name).read_bytes()
        assert first == second, name


async def test_segment_comparison_is_written(fixture_paths, tmp_path):
    segments = tmp_path / "segments.csv"
    segments.write_text(
        "member_id,type,first_index,last_index\nM001,buy,0,9\nM001,sell,10,19\n", encoding="utf-8"
    )
    inputs = InputPaths(
        transactions=fixture_paths["transactions"],
        calendar=fixture_paths["calendar"],
        segments=segments,
    )
    result = await run_pipeline(run_config(fixture_paths, tmp_path, inputs=inputs))
    assert result["status"] == "success"
    assert "segment_comparison.csv" in result["outputs"]


async def test_segments_of_filtered_members_are_skipped(fixture_paths, tmp_path):
    tape = load_tape(fixture_paths["transactions"], fixture_paths["calendar"])
    activity = member_periods(tape)
    threshold = int(activity.loc[activity["member_id"] == "BG01", "transactions"].max()) + 1
    member_filter = MemberFilter(min_transactions=threshold, min_active_days=1)
    assert eligible_members(tape, member_filter) == ["M001"]

    segments = tmp_path / "segments.csv"
    segments.write_text(
        "member_id,type,first_index,last_index\n"
        "BG01,buy,0,9\nM001,buy,0,9\nM001,sell,10,19\n",
        encoding="utf-8",
    )
    inputs = InputPaths(
        transactions=fixture_paths["transactions"],
        calendar=fixture_paths["calendar"],
        segments=segments,
    )
    result = await run_pipeline(
        run_config(fixture_paths, tmp_path, inputs=inputs, member_filter=member_filter)
    )
    assert result["status"] == "success"
    assert result["exit_code"] == 0
    assert "compare: BG01 not analyzed" in result["skipped"]
    run_dir = Path(result["run_dir"])
    assert not (run_dir / "FAILED.json").exists()
    table = pd.read_csv(run_dir / "segment_comparison.csv")
    assert table["n_segments"].sum() == 2 * 3


async def test_no_members_exits_with_domain_code(fixture_paths, tmp_path):
    config = run_config(
        fixture_paths, tmp_path, member_filter=MemberFilter(min_transactions=10**6)
    )
    result = await run_pipeline(config)
    assert result["status"] == "no_members"
    assert result["exit_code"] == 3
    assert result["message"] == "no members passed filter"


async def test_pipeline_needs_three_states(fixture_paths, tmp_path):
    result = await run_pipeline(
        run_config(fixture_paths, tmp_path, model=ModelSettings(num_states=2))
    )
    assert result["status"] == "error"
    assert result["exit_code"] == 2
    assert result["stage"] == "setup"


async def test_malformed_tape_leaves_a_failure_marker(fixture_paths, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text(
        "timestamp,member_id,sign,shares,price\n2004-01-02T09:00:00,M001,0,100,10.0\n",
        encoding="utf-8",
    )
    inputs = InputPaths(transactions=bad, calendar=fixture_paths["calendar"])
    config = run_config(fixture_paths, tmp_path / "runs", inputs=inputs)
    result = await run_pipeline(config)
    assert result["exit_code"] == 3
    assert result["stage"] == "load"
    failure = json.loads((config.run_dir() / "FAILED.json").read_text())
    assert failure["stage"] == "load"
    assert failure["error_type"] == "DataError"


def run_cli(argv, capsys):
    with pytest.raises(SystemExit) as exit_info:
        main(argv)
    return exit_info.value.code, json.loads(capsys.readouterr().out)


def test_cli_simulate_then_fit(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("HIDDEN_ORDER_SEED", raising=False)
    code, result = run_cli(
        ["simulate", "--output-dir", str(tmp_path), "--num-patches", "40",
         "--min-length", "5", "--seed", "4"],
        capsys,
    )
    assert code == 0
    assert result["seed"] == 4
    signs = pd.read_csv(tmp_path / "signs.csv")
    assert len(signs) == result["length"]

    code, result = run_cli(
        ["fit", "--signs", str(tmp_path / "signs.csv"), "--output", str(tmp_path / "model.json"),
         "--restarts", "2", "--max-iterations", "30", "--seed", "4"],
        capsys,
    )
    assert code == 0
    assert (tmp_path / "model.json").exists()


def test_cli_reports_missing_inputs(tmp_path, capsys):
    code, result = run_cli(
        ["stats", "--patches", str(tmp_path / "absent.csv"), "--output-dir", str(tmp_path)],
        capsys,
    )
    assert code == 2
    assert result["status"] == "error"


def test_cli_rejects_bad_config(tmp_path, capsys):
    code, result = run_cli(
        ["pipeline", "--transactions", str(tmp_path / "absent.csv"),
         "--calendar", str(tmp_path / "absent.json")],
        capsys,
    )
    assert code == 2
    assert result["error_type"] == "ConfigError"
