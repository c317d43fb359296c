"""
Pipeline Tool

End-to-end run: load the tape, filter members, fit / decode / label / extract
for every member-period on a worker pool, then write pooled statistics, the
asymmetry analysis, the optional segment comparison and the manifest.
"""

import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..compare import cross_tabulate, load_segments
from ..config import MemberFilter, ModelSettings, RunConfig, task_seed
from ..errors import ConfigError, DomainError
from ..hmm import FitReport, HmmModel, signs_to_symbols
from ..hsmm import HsmmModel
from ..patches import (
    Patch,
    StateLabeling,
    extract_patches,
    label_states,
    patches_to_frame,
    pooled_parameter_summary,
)
from ..reporting import RunDirectory, cumulative_sign_series, method_comparison
from ..stats import asymmetry_by_trend
from ..trades import MarketTape, daily_closes, member_periods
from .common import (
    decode_path,
    error_result,
    fit_hmm_model,
    fit_hsmm_model,
    load_tape,
    member_slice,
    safe_name,
)
from .statistics import write_asymmetry, write_patch_statistics

logger = logging.getLogger(__name__)


@dataclass
class MemberPeriodResult:
    """Everything fitted and extracted for one member in one period"""

    member_id: str
    period: Optional[int]
    seed: int
    index_offset: int
    model: HmmModel
    report: FitReport
    labeling: StateLabeling
    path: np.ndarray
    patches: List[Patch]
    hsmm_model: Optional[HsmmModel] = None
    hsmm_report: Optional[FitReport] = None
    hsmm_patches: List[Patch] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def stem(self) -> str:
        period = "all" if self.period is None else self.period
        return f"{safe_name(self.member_id)}_{period}"


def eligible_members(tape: MarketTape, member_filter: MemberFilter) -> List[str]:
    """Members meeting both activity thresholds in every period of the tape"""
    summary = member_periods(tape)
    periods = sorted(summary["period"].unique().tolist())
    passing = summary[
        (summary["transactions"] >= member_filter.min_transactions)
        & (summary["active_days"] >= member_filter.min_active_days)
    ]
    members = []
    for member, group in passing.groupby("member_id", sort=True):
        if sorted(group["period"].tolist()) == periods:
            members.append(str(member))
    logger.info(
        f"{len(members)} of {summary['member_id'].nunique()} members pass the activity filter "
        f"({member_filter.min_transactions} transactions, {member_filter.min_active_days} days)"
    )
    return members


def member_tasks(
    tape: MarketTape, members: List[str], single_period: bool
) -> List[Tuple[str, Optional[int]]]:
    if single_period:
        return [(member, None) for member in members]
    tasks = []
    for member in members:
        periods = sorted(tape.member_transactions(member)["period"].unique().tolist())
        tasks.extend((member, int(period)) for period in periods)
    return tasks


def analyze_member_period(
    tape: MarketTape,
    member_id: str,
    period: Optional[int],
    settings: ModelSettings,
    seed: int,
) -> MemberPeriodResult:
    """Fit, decode, label and extract one member-period (runs on a worker thread)"""
    rows, offset = member_slice(tape, member_id, period)
    symbols = signs_to_symbols(rows["sign"].to_numpy())
    fit_seed = task_seed(seed, member_id, period)
    logger.info(f"Fitting member {member_id} period {period}: {symbols.size} transactions")

    report = fit_hmm_model(symbols, settings, fit_seed)
    model = report.fitted_model
    labeling = label_states(model)
    path = decode_path(model, symbols, settings.decoder)
    patches = extract_patches(path, labeling, rows, tape, index_offset=offset)
    result = MemberPeriodResult(
        member_id=member_id,
        period=period,
        seed=fit_seed,
        index_offset=offset,
        model=model,
        report=report,
        labeling=labeling,
        path=path,
        patches=patches,
        warnings=list(report.warnings),
    )
    if labeling.ambiguous:
        result.warnings.append("ambiguous state labeling")

    if settings.use_hsmm:
        try:
            hsmm_model, hsmm_report = fit_hsmm_model(symbols, settings, fit_seed)
        except DomainError as e:
            logger.warning(f"Member {member_id} period {period}: HSMM skipped: {e}")
            result.warnings.append(f"hsmm skipped: {e}")
        else:
            hsmm_labeling = label_states(hsmm_model)
            hsmm_path = decode_path(hsmm_model, symbols)
            result.hsmm_model = hsmm_model
            result.hsmm_report = hsmm_report
            result.hsmm_patches = extract_patches(
                hsmm_path, hsmm_labeling, rows, tape, index_offset=offset
            )
    return result


def _write_models(out: RunDirectory, results: List[MemberPeriodResult]) -> None:
    for result in results:
        out.write_json(f"models/{result.stem}.json", result.model.to_dict())
        out.write_json(
            f"models/{result.stem}.fit.json",
            {
                "member_id": result.member_id,
                "period": result.period,
                "seed": result.seed,
                "labeling": result.labeling.to_dict(),
                "report": result.report.to_dict(),
                "warnings": result.warnings,
            },
        )
        if result.hsmm_model is not None:
            out.write_json(f"models/{result.stem}.hsmm.json", result.hsmm_model.to_dict())
            out.write_json(f"models/{result.stem}.hsmm.fit.json", result.hsmm_report.to_dict())


def _fit_summary(results: List[MemberPeriodResult]) -> Dict[str, Any]:
    return {
        "pooled": pooled_parameter_summary(
            [r.model for r in results], [r.labeling for r in results]
        ),
        "fits": [
            {
                "member_id": r.member_id,
                "period": r.period,
                "log_likelihood": r.report.log_likelihood,
                "iterations": r.report.iterations,
                "converged": r.report.converged,
                "degenerate": r.report.degenerate,
                "ambiguous_labeling": r.labeling.ambiguous,
                "transactions": int(r.path.size),
                "patches": len(r.patches),
            }
            for r in results
        ],
    }


async def _run_tasks(
    tape: MarketTape, tasks: List[Tuple[str, Optional[int]]], config: RunConfig
) -> List[MemberPeriodResult]:
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [
            loop.run_in_executor(
                pool, analyze_member_period, tape, member, period, config.model, config.seed
            )
            for member, period in tasks
        ]
        return list(await asyncio.gather(*futures))


async def run_pipeline(config: RunConfig) -> Dict[str, Any]:
    """Run every stage for a resolved configuration

    Outputs go to <output_dir>/<run_id>/. On failure the files written so far
    are kept and FAILED.json names the failing stage.

    Returns:
        Status dictionary with exit_code (0 success, 2 config, 3 data, 4 numeric)
    """
    out: Optional[RunDirectory] = None
    stage = "setup"
    skipped: List[str] = []
    try:
        if config.model.num_states != 3:
            raise ConfigError("The pipeline labels buy / neutral / sell states: num_states must be 3")
        out = RunDirectory(config.run_dir())
        manifest_config = config.model_dump(mode="json")

        stage = "load"
        tape = await asyncio.to_thread(
            load_tape, config.inputs.transactions, config.inputs.calendar, config.tape_schema
        )
        out.write_json("load_report.json", tape.report.to_dict())

        stage = "member_filter"
        members = eligible_members(tape, config.member_filter)
        if not members:
            logger.warning("No members passed the activity filter")
            out.write_manifest(
                manifest_config, config.config_hash(), config.seed, {"status": "no_members"}
            )
            return {
                "status": "no_members",
                "exit_code": DomainError.exit_code,
                "message": "no members passed filter",
                "run_dir": str(out.root),
            }

        stage = "fit"
        tasks = member_tasks(tape, members, config.single_period)
        results = await _run_tasks(tape, tasks, config)
        _write_models(out, results)

        stage = "reports"
        patches = [patch for result in results for patch in result.patches]
        out.write_table("patches.csv", patches_to_frame(patches))
        write_patch_statistics(
            out, patches, config.stats.hill_quantile, config.stats.n_min, config.stats.num_bins
        )
        out.write_json("fit_summary.json", _fit_summary(results))
        first = results[0]
        out.write_table(
            "cumulative_sign.csv",
            cumulative_sign_series(
                member_slice(tape, first.member_id, first.period)[0], first.path, first.labeling
            ),
        )

        stage = "asymmetry"
        try:
            asymmetry = asymmetry_by_trend(
                patches, daily_closes(tape), config.stats.windowing, config.stats.n_min,
                tape.calendar,
            )
        except DomainError as e:
            logger.warning(f"Asymmetry analysis skipped: {e}")
            skipped.append(f"asymmetry: {e}")
        else:
            write_asymmetry(out, asymmetry)

        stage = "hsmm_comparison"
        with_hsmm = [r for r in results if r.hsmm_model is not None]
        if with_hsmm:
            hsmm_patches = [patch for r in with_hsmm for patch in r.hsmm_patches]
            out.write_table("hsmm_patches.csv", patches_to_frame(hsmm_patches))
            ccdf, hill = method_comparison(
                {"hmm": [p for r in with_hsmm for p in r.patches], "hsmm": hsmm_patches},
                config.stats.hill_quantile,
                config.stats.n_min,
            )
            out.write_table("hmm_vs_hsmm_length_ccdf.csv", ccdf)
            out.write_table("hmm_vs_hsmm_hill.csv", hill)
        elif config.model.use_hsmm:
            skipped.append("hsmm: no member-period long enough")

        stage = "compare"
        if config.inputs.segments is not None:
            segments = load_segments(config.inputs.segments)
            analyzed = set(members)
            for member in sorted({s.member_id for s in segments} - analyzed):
                logger.warning(f"Segments of {member} skipped: member was not analyzed")
                skipped.append(f"compare: {member} not analyzed")
            segments = [s for s in segments if s.member_id in analyzed]
            out.write_table("segment_comparison.csv", cross_tabulate(patches, segments))

        stage = "manifest"
        out.write_manifest(
            manifest_config,
            config.config_hash(),
            config.seed,
            {"status": "success", "members": members, "tasks": len(tasks), "skipped": skipped},
        )
        return {
            "status": "success",
            "exit_code": 0,
            "run_dir": str(out.root),
            "members": len(members),
            "tasks": len(tasks),
            "patches": len(patches),
            "skipped": skipped,
            "outputs": sorted(out.row_counts),
        }
    except Exception as e:
        if out is not None:
            try:
                out.write_failure(stage, e, out.row_counts)
            except OSError as marker_error:
                logger.error(f"Could not write failure marker: {marker_error}")
        return error_result(f"Pipeline stage '{stage}'", e, stage=stage)


__all__ = [
    "MemberPeriodResult",
    "analyze_member_period",
    "eligible_members",
    "member_tasks",
    "run_pipeline",
]
