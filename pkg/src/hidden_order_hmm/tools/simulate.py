"""
Simulation Tool

Generates synthetic patched sign series, either as a bare sign file or as a
complete transactions / calendar fixture for end-to-end runs.
"""

import asyncio
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from ..patches import write_csv_atomic
from ..synthgen import (
    FixtureConfig,
    PatchGenConfig,
    generate_patched_series,
    planted_states,
    write_fixture,
)
from .common import error_result

logger = logging.getLogger(__name__)


def _write_series(config: PatchGenConfig, output_dir: Path) -> Dict[str, Any]:
    symbols, truth = generate_patched_series(config)
    signs = np.where(symbols > 0, 1, -1)
    series = pd.DataFrame(
        {"index": np.arange(signs.size), "sign": signs, "planted_sign": planted_states(truth)}
    )
    write_csv_atomic(series, output_dir / "signs.csv")
    write_csv_atomic(truth, output_dir / "ground_truth.csv")
    return {
        "signs": str(output_dir / "signs.csv"),
        "ground_truth": str(output_dir / "ground_truth.csv"),
        "length": int(signs.size),
        "num_patches": int(len(truth)),
    }


async def simulate_series(
    output_dir: Path,
    patches: PatchGenConfig,
    fixture: bool = False,
    fixture_options: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """Write a synthetic series (signs.csv + ground_truth.csv) or a full fixture

    Args:
        output_dir: Directory to write into
        patches: Patch-length law and bias
        fixture: Also lay the series out as transactions.csv + calendar.json
        fixture_options: Extra FixtureConfig fields (member_id, price, ...)

    Returns:
        Written paths and series size, or an error status
    """
    try:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        if fixture:
            config = FixtureConfig(patches=patches, **(fixture_options or {}))
            paths = await asyncio.to_thread(write_fixture, config, output_dir)
            truth = pd.read_csv(paths["ground_truth"])
            result = {name: str(path) for name, path in paths.items()}
            result.update(length=int(truth["length"].sum()), num_patches=int(len(truth)))
        else:
            result = await asyncio.to_thread(_write_series, patches, output_dir)
        logger.info(f"Simulated {result['num_patches']} patches into {output_dir}")
        return {"status": "success", "exit_code": 0, "seed": patches.seed, **result}
    except Exception as e:
        return error_result("Simulation", e, output_dir=str(output_dir))
