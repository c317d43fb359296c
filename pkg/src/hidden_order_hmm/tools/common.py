"""
Shared Tool Helpers

Input loading and the per-member model steps reused by the subcommand tools
and the pipeline, plus the error-result shape every tool returns.
"""

import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from ..config import ModelSettings, SchemaConfig
from ..errors import DataError, DomainError, exit_code_for
from ..hmm import (
    FitReport,
    HmmModel,
    fit_baum_welch,
    posterior_decode,
    signs_to_symbols,
    viterbi_decode,
)
from ..hsmm import HsmmModel, decode_hsmm, fit_hsmm
from ..trades import MarketTape, load_calendar, load_transactions

logger = logging.getLogger(__name__)


def error_result(action: str, error: BaseException, **context: Any) -> Dict[str, Any]:
    """Log a failed tool call and build its status dictionary"""
    logger.error(f"{action} failed: {error}")
    return {
        "status": "error",
        "error": str(error),
        "error_type": type(error).__name__,
        "exit_code": exit_code_for(error),
        **context,
    }


def safe_name(value: Any) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", str(value))


def load_tape(
    transactions: Path, calendar: Path, schema: Optional[SchemaConfig] = None
) -> MarketTape:
    schema = schema or SchemaConfig()
    return load_transactions(transactions, schema, load_calendar(calendar, schema.timezone))


def member_slice(
    tape: MarketTape, member_id: str, period: Optional[int] = None
) -> Tuple[pd.DataFrame, int]:
    """A member's rows (optionally one year) and their offset in the member's sequence

    Raises:
        DataError: the member has no transactions in the requested slice
    """
    everything = tape.member_transactions(member_id)
    if period is None:
        rows, offset = everything, 0
    else:
        rows = everything[everything["period"] == period].reset_index(drop=True)
        offset = int(np.count_nonzero(everything["period"].to_numpy() < period))
    if rows.empty:
        where = "" if period is None else f" in {period}"
        raise DataError(f"Member {member_id} has no transactions{where}")
    return rows, offset


def read_signs(path: Path) -> np.ndarray:
    """Symbols from a CSV with a `sign` column of +1 / -1 values"""
    frame = pd.read_csv(path)
    if "sign" not in frame.columns:
        raise DataError(f"{path}: missing column 'sign'")
    return signs_to_symbols(frame["sign"].to_numpy())


def fit_hmm_model(symbols: np.ndarray, settings: ModelSettings, seed: int) -> FitReport:
    return fit_baum_welch(symbols, settings.num_states, settings.fit_config(seed))


def fit_hsmm_model(
    symbols: np.ndarray, settings: ModelSettings, seed: int
) -> Tuple[HsmmModel, FitReport]:
    return fit_hsmm(
        symbols, settings.num_states, settings.max_sojourn, settings.hsmm_fit_config(seed)
    )


def decode_path(model: Any, symbols: np.ndarray, decoder: str = "posterior") -> np.ndarray:
    """State path under an HMM (posterior or Viterbi) or an HSMM (posterior)"""
    if isinstance(model, HsmmModel):
        return decode_hsmm(model, symbols).path
    if not isinstance(model, HmmModel):
        raise DomainError(f"Cannot decode with a {type(model).__name__}")
    if decoder == "viterbi":
        return viterbi_decode(model, symbols)
    return posterior_decode(model, symbols).path


def load_any_model(path: Path) -> Any:
    """HmmModel or HsmmModel depending on the JSON content"""
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    if "sojourn" in data:
        return HsmmModel.from_dict(data)
    return HmmModel.from_dict(data)
