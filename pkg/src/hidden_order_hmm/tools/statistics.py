"""
Statistics Tools

Report tables from a patch CSV (summary, tail exponents, lognormality,
plot-data files) and the monthly buy/sell asymmetry analysis.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import pandas as pd

from ..config import SchemaConfig
from ..patches import Patch, read_patches_csv
from ..reporting import RunDirectory, figure_tables, lognormality, patch_summary, tail_exponents
from ..stats import AsymmetryResult, asymmetry_by_trend
from ..trades import daily_closes
from .common import error_result, load_tape

logger = logging.getLogger(__name__)


def write_patch_statistics(
    out: RunDirectory,
    patches: Sequence[Patch],
    hill_quantile: float = 0.05,
    n_min: int = 10,
    num_bins: int = 20,
) -> Dict[str, pd.DataFrame]:
    summary = patch_summary(patches, n_min)
    tails = tail_exponents(patches, hill_quantile, n_min)
    normality = lognormality(patches, n_min)
    out.write_table("patch_summary.csv", summary)
    out.write_table("tail_exponents.csv", tails)
    out.write_table("lognormality.csv", normality)
    out.write_tables(figure_tables(patches, n_min, num_bins), prefix="figures/")
    return {"patch_summary": summary, "tail_exponents": tails, "lognormality": normality}


def write_asymmetry(out: RunDirectory, result: AsymmetryResult) -> None:
    out.write_table("asymmetry_windows.csv", result.windows_frame())
    out.write_table("asymmetry_regressions.csv", result.regressions)


async def compute_statistics(
    patches_path: Path,
    output_dir: Path,
    hill_quantile: float = 0.05,
    n_min: int = 10,
    num_bins: int = 20,
) -> Dict[str, Any]:
    """Write the patch report tables for a patch CSV

    Returns:
        Written files, or an error status
    """
    try:
        patches = read_patches_csv(patches_path)
        out = RunDirectory(output_dir)
        tables = write_patch_statistics(out, patches, hill_quantile, n_min, num_bins)
        return {
            "status": "success",
            "exit_code": 0,
            "patches": len(patches),
            "outputs": sorted(out.row_counts),
            "summary": tables["patch_summary"].to_dict(orient="records"),
        }
    except Exception as e:
        return error_result("Statistics", e, patches=str(patches_path))


async def analyze_asymmetry(
    patches_path: Path,
    transactions: Path,
    calendar: Path,
    output_dir: Path,
    n_min: int = 10,
    schema: Optional[SchemaConfig] = None,
) -> Dict[str, Any]:
    """Regress monthly buy-minus-sell patch statistics on the trend ratio x

    Daily closes come from the transactions tape.

    Returns:
        Per-metric regression summary, or an error status
    """
    try:
        patches = read_patches_csv(patches_path)
        tape = load_tape(transactions, calendar, schema)
        result = asymmetry_by_trend(
            patches, daily_closes(tape), "monthly", n_min, tape.calendar
        )
        write_asymmetry(RunDirectory(output_dir), result)
        return {
            "status": "success",
            "exit_code": 0,
            "windows": len(result.windows),
            "excluded_windows": result.excluded_windows,
            "degenerate": result.degenerate,
            "regressions": result.regressions.to_dict(orient="records"),
        }
    except Exception as e:
        return error_result("Asymmetry analysis", e, patches=str(patches_path))
