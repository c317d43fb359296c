"""
Hidden Order HMM command line

Batch entry point: one subcommand per analysis stage plus `pipeline`, which
runs them all for every member-period of a transactions tape. Each subcommand
prints its JSON status dictionary and exits with its exit_code.
"""

import argparse
import asyncio
import json
import logging
import os
import sys
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from .config import (
    ModelSettings,
    SchemaConfig,
    StatsSettings,
    resolve_run_config,
    resolve_seed,
    resolve_settings,
)
from .errors import HiddenOrderError
from .synthgen import PatchGenConfig
from .tools import (
    analyze_asymmetry,
    compare_segments,
    compute_statistics,
    decode_sequence,
    extract_member_patches,
    fit_model,
    run_pipeline,
    simulate_series,
)
from .tools.common import error_result

logger = logging.getLogger(__name__)


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, help="JSON run configuration (flags override it)")
    parent.add_argument("--seed", type=int, help="Random seed (env: HIDDEN_ORDER_SEED)")
    return parent


def _tape_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--transactions", type=Path, help="Transactions CSV")
    parent.add_argument("--calendar", type=Path, help="Trading calendar JSON")
    parent.add_argument("--timezone", help="Exchange timezone of the tape (default: UTC)")
    parent.add_argument(
        "--max-malformed-fraction",
        type=float,
        help="Abort when more than this fraction of rows is malformed (default: 0.001)",
    )
    parent.add_argument(
        "--both-sides-feed",
        action="store_true",
        default=None,
        help="Tape lists matched member trades on both sides; count them once in market volume",
    )
    return parent


def _model_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--num-states", type=int, help="Hidden states N (default: 3)")
    parent.add_argument("--restarts", type=int, help="EM restarts (default: 10)")
    parent.add_argument("--tolerance", type=float, help="EM convergence tolerance (default: 1e-6)")
    parent.add_argument("--max-iterations", type=int, help="EM iteration cap (default: 500)")
    parent.add_argument("--decoder", choices=["posterior", "viterbi"], help="State decoder")
    parent.add_argument("--hsmm", action="store_true", default=None, help="Also fit an HSMM")
    parent.add_argument("--max-sojourn", type=int, help="HSMM maximum sojourn L (default: 200)")
    parent.add_argument("--hsmm-restarts", type=int, help="HSMM EM restarts (default: 2)")
    parent.add_argument(
        "--hsmm-time-budget", type=float, help="Seconds before an HSMM fit stops early"
    )
    return parent


def _stats_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--hill-quantile", type=float, help="Hill top fraction (default: 0.05)")
    parent.add_argument("--num-bins", type=int, help="Histogram bins (default: 20)")
    parent.add_argument("--n-min", type=int, help="Minimum patch length (default: 10)")
    return parent


def _series_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--signs", type=Path, help="CSV with a sign column (+1 / -1)")
    parser.add_argument("--member-id", help="Member whose transactions form the series")
    parser.add_argument("--period", type=int, help="Restrict to one calendar year")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hidden-order-hmm",
        description="Detect hidden-order patches in transaction-sign series with HMMs",
    )
    parser.add_argument(
        "--log-level",
        default=os.environ.get("LOG_LEVEL", "INFO"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: INFO, env: LOG_LEVEL)",
    )
    config, tape, model, stats = _config_parent(), _tape_parent(), _model_parent(), _stats_parent()
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser(
        "simulate", parents=[config], help="Generate a synthetic patched series"
    )
    simulate.add_argument("--output-dir", type=Path, required=True)
    simulate.add_argument("--num-patches", type=int, help="Number of patches (default: 5000)")
    simulate.add_argument("--pareto-exponent", type=float, help="Length tail exponent (default: 2)")
    simulate.add_argument("--min-length", type=int, help="Smallest patch length (default: 1)")
    simulate.add_argument("--bias", type=float, help="Dominant-sign probability (default: 0.95)")
    simulate.add_argument(
        "--random-signs",
        action="store_true",
        help="Draw every patch's dominant sign independently instead of alternating",
    )
    simulate.add_argument(
        "--fixture", action="store_true", help="Write transactions.csv and calendar.json too"
    )
    simulate.add_argument("--member-id", help="Fixture member id (default: M001)")
    simulate.add_argument("--start-date", type=date.fromisoformat, help="First fixture session")
    simulate.add_argument(
        "--background-every", type=int, help="One background trade every k member trades"
    )

    fit = commands.add_parser(
        "fit", parents=[config, tape, model], help="Fit an HMM (or HSMM) to one series"
    )
    fit.add_argument("--output", type=Path, required=True, help="Model JSON to write")
    _series_arguments(fit)

    decode = commands.add_parser(
        "decode", parents=[config, tape], help="Decode a series with a saved model"
    )
    decode.add_argument("--model", type=Path, required=True)
    decode.add_argument("--output", type=Path, required=True, help="State path CSV to write")
    decode.add_argument("--decoder", choices=["posterior", "viterbi"], help="State decoder")
    _series_arguments(decode)

    patches = commands.add_parser(
        "patches", parents=[config, tape], help="Extract one member's patches"
    )
    patches.add_argument("--model", type=Path, required=True)
    patches.add_argument("--member-id", required=True)
    patches.add_argument("--period", type=int)
    patches.add_argument("--output", type=Path, required=True, help="Patch CSV to write")
    patches.add_argument("--decoder", choices=["posterior", "viterbi"], help="State decoder")
    patches.add_argument("--n-min", type=int, default=0, help="Drop shorter patches (default: 0)")

    stats_cmd = commands.add_parser(
        "stats", parents=[config, stats], help="Patch summary, tails, lognormality, plot data"
    )
    stats_cmd.add_argument("--patches", type=Path, required=True)
    stats_cmd.add_argument("--output-dir", type=Path, required=True)

    asymmetry = commands.add_parser(
        "asymmetry", parents=[config, tape], help="Monthly buy/sell asymmetry vs price trend"
    )
    asymmetry.add_argument("--patches", type=Path, required=True)
    asymmetry.add_argument("--output-dir", type=Path, required=True)
    asymmetry.add_argument("--n-min", type=int, help="Minimum patch length (default: 10)")

    compare = commands.add_parser(
        "compare", parents=[config], help="Count HMM patches inside external segments"
    )
    compare.add_argument("--patches", type=Path, required=True)
    compare.add_argument("--segments", type=Path, required=True)
    compare.add_argument("--output", type=Path, required=True)
    compare.add_argument("--assignment", choices=["midpoint", "first"], default="midpoint")

    pipeline = commands.add_parser(
        "pipeline", parents=[config, tape, model, stats], help="Run every stage end to end"
    )
    pipeline.add_argument("--segments", type=Path, help="Optional segment CSV to compare with")
    pipeline.add_argument("--min-transactions", type=int, help="Per-year activity (default: 1000)")
    pipeline.add_argument("--min-active-days", type=int, help="Per-year active days (default: 200)")
    pipeline.add_argument("--output-dir", type=Path, help="env: HIDDEN_ORDER_OUTPUT_DIR")
    pipeline.add_argument("--run-id", help="Run directory name (default: from config hash)")
    pipeline.add_argument("--workers", type=int, help="Worker threads (env: HIDDEN_ORDER_WORKERS)")
    pipeline.add_argument(
        "--single-period",
        action="store_true",
        default=None,
        help="Fit each member once over the whole tape instead of per year",
    )
    return parser


def _schema_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "timezone": args.timezone,
        "max_malformed_fraction": args.max_malformed_fraction,
        "both_sides_feed": args.both_sides_feed,
    }


def _model_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "num_states": args.num_states,
        "restarts": args.restarts,
        "tolerance": args.tolerance,
        "max_iterations": args.max_iterations,
        "decoder": args.decoder,
        "use_hsmm": args.hsmm,
        "max_sojourn": args.max_sojourn,
        "hsmm_restarts": args.hsmm_restarts,
        "hsmm_time_budget_seconds": args.hsmm_time_budget,
    }


def _stats_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {"hill_quantile": args.hill_quantile, "num_bins": args.num_bins, "n_min": args.n_min}


def _schema(args: argparse.Namespace) -> SchemaConfig:
    return resolve_settings(SchemaConfig, args.config, "tape_schema", _schema_overrides(args))


async def _simulate(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {
        "num_patches": args.num_patches,
        "pareto_exponent": args.pareto_exponent,
        "min_length": args.min_length,
        "bias": args.bias,
        "seed": resolve_seed(args.seed, args.config),
        "alternate_signs": False if args.random_signs else None,
    }
    patches = resolve_settings(PatchGenConfig, args.config, "simulate", overrides)
    fixture_options = {
        key: value
        for key, value in {
            "member_id": args.member_id,
            "start_date": args.start_date,
            "background_every": args.background_every,
        }.items()
        if value is not None
    }
    return await simulate_series(args.output_dir, patches, args.fixture, fixture_options)


async def _fit(args: argparse.Namespace) -> Dict[str, Any]:
    settings = resolve_settings(ModelSettings, args.config, "model", _model_overrides(args))
    return await fit_model(
        args.output,
        settings,
        seed=resolve_seed(args.seed, args.config),
        signs_path=args.signs,
        transactions=args.transactions,
        calendar=args.calendar,
        member_id=args.member_id,
        period=args.period,
        schema=_schema(args),
    )


async def _decode(args: argparse.Namespace) -> Dict[str, Any]:
    settings = resolve_settings(ModelSettings, args.config, "model", {"decoder": args.decoder})
    return await decode_sequence(
        args.model,
        args.output,
        decoder=settings.decoder,
        signs_path=args.signs,
        transactions=args.transactions,
        calendar=args.calendar,
        member_id=args.member_id,
        period=args.period,
        schema=_schema(args),
    )


async def _patches(args: argparse.Namespace) -> Dict[str, Any]:
    settings = resolve_settings(ModelSettings, args.config, "model", {"decoder": args.decoder})
    return await extract_member_patches(
        args.model,
        args.transactions,
        args.calendar,
        args.member_id,
        args.output,
        period=args.period,
        decoder=settings.decoder,
        n_min=args.n_min,
        schema=_schema(args),
    )


async def _stats(args: argparse.Namespace) -> Dict[str, Any]:
    settings = resolve_settings(StatsSettings, args.config, "stats", _stats_overrides(args))
    return await compute_statistics(
        args.patches, args.output_dir, settings.hill_quantile, settings.n_min, settings.num_bins
    )


async def _asymmetry(args: argparse.Namespace) -> Dict[str, Any]:
    settings = resolve_settings(StatsSettings, args.config, "stats", {"n_min": args.n_min})
    return await analyze_asymmetry(
        args.patches,
        args.transactions,
        args.calendar,
        args.output_dir,
        n_min=settings.n_min,
        schema=_schema(args),
    )


async def _compare(args: argparse.Namespace) -> Dict[str, Any]:
    return await compare_segments(args.patches, args.segments, args.output, args.assignment)


async def _pipeline(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {
        "inputs": {
            "transactions": args.transactions,
            "calendar": args.calendar,
            "segments": args.segments,
        },
        "tape_schema": _schema_overrides(args),
        "member_filter": {
            "min_transactions": args.min_transactions,
            "min_active_days": args.min_active_days,
        },
        "model": _model_overrides(args),
        "stats": _stats_overrides(args),
        "seed": args.seed,
        "output_dir": args.output_dir,
        "run_id": args.run_id,
        "workers": args.workers,
        "single_period": args.single_period,
    }
    config = resolve_run_config(overrides, args.config)
    logger.info(f"Pipeline run {config.resolved_run_id()} (seed {config.seed})")
    return await run_pipeline(config)


COMMANDS = {
    "simulate": _simulate,
    "fit": _fit,
    "decode": _decode,
    "patches": _patches,
    "stats": _stats,
    "asymmetry": _asymmetry,
    "compare": _compare,
    "pipeline": _pipeline,
}


async def dispatch(args: argparse.Namespace) -> Dict[str, Any]:
    try:
        return await COMMANDS[args.command](args)
    except HiddenOrderError as e:
        return error_result(f"Command '{args.command}'", e)


def main(argv: Optional[List[str]] = None) -> None:
    """Entry point for the hidden-order-hmm console script"""
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )
    result = asyncio.run(dispatch(args))
    print(json.dumps(result, indent=2, default=str))
    sys.exit(result.get("exit_code", 0))


if __name__ == "__main__":
    main()
