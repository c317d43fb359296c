"""
Model Tools

Fit an HMM (or HSMM) to one sign series and decode a series with a saved
model. The series comes either from a member's transactions in a tape or from
a plain CSV of signs.
"""

import asyncio
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from ..config import ModelSettings, SchemaConfig, task_seed
from ..errors import ConfigError, DomainError
from ..hmm import save_model, signs_to_symbols, write_json_atomic
from ..hsmm import save_hsmm
from ..patches import label_states, write_csv_atomic
from .common import (
    decode_path,
    error_result,
    fit_hmm_model,
    fit_hsmm_model,
    load_any_model,
    load_tape,
    member_slice,
    read_signs,
)

logger = logging.getLogger(__name__)


def series_symbols(
    signs_path: Optional[Path] = None,
    transactions: Optional[Path] = None,
    calendar: Optional[Path] = None,
    member_id: Optional[str] = None,
    period: Optional[int] = None,
    schema: Optional[SchemaConfig] = None,
) -> np.ndarray:
    """Symbols of a signs file, or of one member's transactions in a tape"""
    if signs_path is not None:
        return read_signs(signs_path)
    if transactions is None or calendar is None or member_id is None:
        raise ConfigError("Give either a signs file or transactions, calendar and member")
    tape = load_tape(transactions, calendar, schema)
    rows, _ = member_slice(tape, member_id, period)
    return signs_to_symbols(rows["sign"].to_numpy())


def _fit(symbols: np.ndarray, settings: ModelSettings, seed: int, output: Path) -> Dict[str, Any]:
    if settings.use_hsmm:
        model, report = fit_hsmm_model(symbols, settings, seed)
        save_hsmm(model, output)
    else:
        report = fit_hmm_model(symbols, settings, seed)
        model = report.fitted_model
        save_model(model, output)
    report_path = output.with_suffix(".report.json")
    write_json_atomic(report_path, report.to_dict())
    return {
        "model": str(output),
        "report": str(report_path),
        "kind": "hsmm" if settings.use_hsmm else "hmm",
        "length": int(symbols.size),
        "log_likelihood": report.log_likelihood,
        "iterations": report.iterations,
        "converged": report.converged,
        "warnings": report.warnings,
    }


async def fit_model(
    output: Path,
    settings: ModelSettings,
    seed: int = 0,
    signs_path: Optional[Path] = None,
    transactions: Optional[Path] = None,
    calendar: Optional[Path] = None,
    member_id: Optional[str] = None,
    period: Optional[int] = None,
    schema: Optional[SchemaConfig] = None,
) -> Dict[str, Any]:
    """Fit a model to one series and save it as JSON (plus a fit report)

    For a member series the fit seed is derived from (seed, member, period) the
    same way the pipeline derives it, so both produce the same model.

    Returns:
        Paths written and fit summary, or an error status
    """
    try:
        symbols = series_symbols(signs_path, transactions, calendar, member_id, period, schema)
        fit_seed = task_seed(seed, member_id, period) if member_id is not None else seed
        result = await asyncio.to_thread(_fit, symbols, settings, fit_seed, Path(output))
        logger.info(f"Fitted {result['kind']} on {symbols.size} symbols -> {output}")
        return {"status": "success", "exit_code": 0, "seed": fit_seed, **result}
    except Exception as e:
        return error_result("Model fit", e, output=str(output))


def _decode(model: Any, symbols: np.ndarray, decoder: str) -> Tuple[pd.DataFrame, bool]:
    path = decode_path(model, symbols, decoder)
    frame = pd.DataFrame({"index": np.arange(path.size), "state": path})
    labeled = model.num_states == 3 and model.num_symbols == 2
    if labeled:
        labeling = label_states(model)
        frame["label"] = [labeling.labels[int(s)].value for s in path]
    return frame, labeled


async def decode_sequence(
    model_path: Path,
    output: Path,
    decoder: str = "posterior",
    signs_path: Optional[Path] = None,
    transactions: Optional[Path] = None,
    calendar: Optional[Path] = None,
    member_id: Optional[str] = None,
    period: Optional[int] = None,
    schema: Optional[SchemaConfig] = None,
) -> Dict[str, Any]:
    """Decode a series with a saved model and write the state path CSV

    Returns:
        Output path and per-state position counts, or an error status
    """
    try:
        if decoder not in ("posterior", "viterbi"):
            raise ConfigError(f"Unknown decoder {decoder!r}")
        model = load_any_model(model_path)
        symbols = series_symbols(signs_path, transactions, calendar, member_id, period, schema)
        if symbols.max() >= model.num_symbols:
            raise DomainError("Series uses symbols the model does not emit")
        frame, labeled = await asyncio.to_thread(_decode, model, symbols, decoder)
        write_csv_atomic(frame, Path(output))
        counts = frame["state"].value_counts().sort_index()
        return {
            "status": "success",
            "exit_code": 0,
            "output": str(output),
            "length": int(len(frame)),
            "labeled": labeled,
            "state_counts": {int(k): int(v) for k, v in counts.items()},
        }
    except Exception as e:
        return error_result("Decode", e, model=str(model_path))
