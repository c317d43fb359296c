"""
Comparison Tool

Cross-tabulates a patch CSV against an external segment CSV.
"""

import logging
from pathlib import Path
from typing import Any, Dict

from ..compare import cross_tabulate, load_segments
from ..patches import read_patches_csv, write_csv_atomic
from .common import error_result

logger = logging.getLogger(__name__)


async def compare_segments(
    patches_path: Path,
    segments_path: Path,
    output: Path,
    assignment: str = "midpoint",
) -> Dict[str, Any]:
    """Write the long-format segment / HMM-label table

    Args:
        patches_path: Patch CSV (indices member-wide)
        segments_path: Segment CSV (member_id, type, first_index, last_index)
        output: Table CSV to write
        assignment: "midpoint" or "first" index of an HMM patch decides its segment

    Returns:
        Row count and output path, or an error status
    """
    try:
        patches = read_patches_csv(patches_path)
        segments = load_segments(segments_path)
        table = cross_tabulate(patches, segments, assignment)
        write_csv_atomic(table, Path(output))
        logger.info(f"Compared {len(patches)} patches with {len(segments)} segments")
        return {
            "status": "success",
            "exit_code": 0,
            "output": str(output),
            "segments": len(segments),
            "rows": int(len(table)),
        }
    except Exception as e:
        return error_result("Segment comparison", e, segments=str(segments_path))
