"""
Patch Extraction Tool

Decodes one member's transactions with a saved model and writes the member's
patches with every metric.
"""

import asyncio
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from ..config import SchemaConfig
from ..errors import DomainError
from ..hmm import signs_to_symbols
from ..patches import extract_patches, filter_min_length, label_states, write_patches_csv
from .common import decode_path, error_result, load_any_model, load_tape, member_slice

logger = logging.getLogger(__name__)


async def extract_member_patches(
    model_path: Path,
    transactions: Path,
    calendar: Path,
    member_id: str,
    output: Path,
    period: Optional[int] = None,
    decoder: str = "posterior",
    n_min: int = 0,
    schema: Optional[SchemaConfig] = None,
) -> Dict[str, Any]:
    """Decode a member's series and write its labeled patches CSV

    Args:
        model_path: Saved 3-state HMM or HSMM JSON
        transactions: Transactions CSV
        calendar: Calendar JSON
        member_id: Member whose series is decoded
        output: Patch CSV to write
        period: Restrict to one calendar year (indices stay member-wide)
        decoder: "posterior" or "viterbi" (HMM only)
        n_min: Drop patches with fewer transactions (0 keeps all)

    Returns:
        Patch counts per label, or an error status
    """
    try:
        model = load_any_model(model_path)
        labeling = label_states(model)
        tape = load_tape(transactions, calendar, schema)
        rows, offset = member_slice(tape, member_id, period)
        symbols = signs_to_symbols(rows["sign"].to_numpy())
        if symbols.max() >= model.num_symbols:
            raise DomainError("Series uses symbols the model does not emit")
        path = await asyncio.to_thread(decode_path, model, symbols, decoder)
        patches = extract_patches(path, labeling, rows, tape, index_offset=offset)
        kept = filter_min_length(patches, n_min) if n_min > 0 else patches
        write_patches_csv(kept, Path(output))
        counts: Dict[str, int] = {}
        for patch in kept:
            counts[patch.label.value] = counts.get(patch.label.value, 0) + 1
        return {
            "status": "success",
            "exit_code": 0,
            "output": str(output),
            "member_id": member_id,
            "period": period,
            "patches": len(kept),
            "label_counts": dict(sorted(counts.items())),
            "ambiguous_labeling": labeling.ambiguous,
        }
    except Exception as e:
        return error_result("Patch extraction", e, member_id=member_id)
