"""
Reporting

Report tables and plot-data files built from extracted patches, plus the run
directory writer that records row counts and emits manifest.json (config echo,
hash, seed, package versions) or a FAILED.json marker.
"""

import logging
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from .errors import DomainError, HiddenOrderError
from .hmm import write_json_atomic
from .patches import Label, Patch, StateLabeling, filter_min_length, write_csv_atomic
from .stats import (
    conditional_mean_binned,
    empirical_ccdf,
    empirical_pdf,
    hill_estimator,
    jarque_bera_lognormal,
)

logger = logging.getLogger(__name__)

PATCH_GROUPS = ("all", "directional", "buy", "sell", "neutral")
TAIL_METRICS = {"T": "duration_T", "N_tot": "N_tot", "V_tot": "V_tot"}
TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "numba", "pydantic", "python-dotenv")


def _select(patches: Sequence[Patch], group: str) -> List[Patch]:
    if group == "all":
        return list(patches)
    if group == "directional":
        return [p for p in patches if p.label.directional]
    return [p for p in patches if p.label.value == group]


def _values(patches: Sequence[Patch], attribute: str) -> np.ndarray:
    return np.array([getattr(p, attribute) for p in patches], dtype=np.float64)


def _mean_sd(values: np.ndarray) -> Tuple[float, float]:
    if values.size == 0:
        return np.nan, np.nan
    return float(values.mean()), float(values.std(ddof=1)) if values.size > 1 else 0.0


def patch_summary(patches: Sequence[Patch], n_min: int = 10) -> pd.DataFrame:
    """Patch counts and mean / sd lengths per group, unfiltered and with N_tot >= n_min"""
    rows = []
    for group in PATCH_GROUPS:
        selected = _select(patches, group)
        kept = filter_min_length(selected, n_min) if n_min > 0 else selected
        mean, sd = _mean_sd(_values(selected, "N_tot"))
        mean_kept, sd_kept = _mean_sd(_values(kept, "N_tot"))
        rows.append(
            {
                "group": group,
                "patches": len(selected),
                "transactions": int(_values(selected, "N_tot").sum()),
                "mean_length": mean,
                "sd_length": sd,
                "n_min": n_min,
                "patches_min_length": len(kept),
                "mean_length_min": mean_kept,
                "sd_length_min": sd_kept,
            }
        )
    return pd.DataFrame(rows)


def tail_exponents(
    patches: Sequence[Patch], quantile: float = 0.05, n_min: int = 10
) -> pd.DataFrame:
    """Hill exponents of T, N_tot and V_tot for directional and neutral patches

    Groups too small for a stable estimate get NaN values and a note.
    """
    rows = []
    for group in ("directional", "neutral"):
        selected = filter_min_length(_select(patches, group), n_min)
        for metric, attribute in TAIL_METRICS.items():
            values = _values(selected, attribute)
            values = values[values > 0]
            row: Dict[str, Any] = {"group": group, "metric": metric, "n": int(values.size)}
            try:
                estimate = hill_estimator(values, quantile) if values.size else None
                if estimate is None:
                    raise DomainError("no positive samples")
                row.update(
                    exponent=estimate.exponent,
                    ci_low=estimate.ci_low,
                    ci_high=estimate.ci_high,
                    k=estimate.k,
                    note="",
                )
            except HiddenOrderError as e:
                row.update(exponent=np.nan, ci_low=np.nan, ci_high=np.nan, k=0, note=str(e))
            rows.append(row)
    return pd.DataFrame(rows)


def lognormality(patches: Sequence[Patch], n_min: int = 10) -> pd.DataFrame:
    """Jarque-Bera on the logs of T, N_tot and V_tot per group (positive values only)"""
    rows = []
    for group in ("directional", "neutral"):
        selected = filter_min_length(_select(patches, group), n_min)
        for metric, attribute in TAIL_METRICS.items():
            values = _values(selected, attribute)
            values = values[values > 0]
            row: Dict[str, Any] = {"group": group, "metric": metric, "n": int(values.size)}
            try:
                result = jarque_bera_lognormal(values) if values.size else None
                if result is None:
                    raise DomainError("no positive samples")
                row.update(
                    statistic=result.statistic,
                    p_value=result.p_value,
                    reject_at_0_01=result.reject_at_0_01,
                    note="",
                )
            except HiddenOrderError as e:
                row.update(statistic=np.nan, p_value=np.nan, reject_at_0_01=False, note=str(e))
            rows.append(row)
    return pd.DataFrame(rows)


def _per_label(patches: Sequence[Patch], build) -> pd.DataFrame:
    frames = []
    for label in (Label.BUY, Label.NEUTRAL, Label.SELL):
        selected = _select(patches, label.value)
        if not selected:
            continue
        try:
            frame = build(selected)
        except HiddenOrderError as e:
            logger.warning(f"Skipping {label.value} patches in a figure table: {e}")
            continue
        frame.insert(0, "label", label.value)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def figure_tables(
    patches: Sequence[Patch], n_min: int = 10, num_bins: int = 20
) -> Dict[str, pd.DataFrame]:
    """Plot-data tables, one per chart, keyed by output file stem"""
    kept = filter_min_length(patches, n_min)

    def pdf_of(attribute: str):
        return lambda selected: empirical_pdf(
            _values(selected, attribute), num_bins, "linear", (0.0, 1.0)
        )

    def conditional(x_attr: str, y_attr: str, binning: str):
        return lambda selected: conditional_mean_binned(
            _values(selected, x_attr), _values(selected, y_attr), binning, num_bins
        )

    tables = {
        "vbuy_ratio_pdf": _per_label(kept, pdf_of("buy_volume_ratio")),
        "market_order_fraction_pdf": _per_label(kept, pdf_of("market_order_fraction")),
        "participation_pdf": _per_label(kept, pdf_of("participation_rate")),
        "market_order_fraction_vs_length": _per_label(
            kept, conditional("N_tot", "market_order_fraction", "log")
        ),
        "participation_vs_length": _per_label(kept, conditional("N_tot", "participation_rate", "log")),
        "participation_vs_market_order_fraction": _per_label(
            kept, conditional("market_order_fraction", "participation_rate", "linear")
        ),
    }
    for metric, attribute in TAIL_METRICS.items():
        frames = []
        for group in ("directional", "neutral"):
            values = _values(_select(kept, group), attribute)
            values = values[values > 0]
            if values.size:
                frame = empirical_ccdf(values)
                frame.insert(0, "group", group)
                frames.append(frame)
        tables[f"{metric.lower()}_ccdf"] = (
            pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
        )
    return tables


def cumulative_sign_series(
    member_txs: pd.DataFrame, path: np.ndarray, labeling: StateLabeling
) -> pd.DataFrame:
    """Running sum of a member's signs with the decoded state at every trade"""
    signs = member_txs["sign"].to_numpy(dtype=np.int64)
    if signs.size != np.asarray(path).size:
        raise DomainError("Path length does not match the member's transactions")
    return pd.DataFrame(
        {
            "index": np.arange(signs.size),
            "timestamp": member_txs["timestamp"].to_numpy(),
            "sign": signs,
            "cumulative_sign": np.cumsum(signs),
            "state": np.asarray(path, dtype=np.int64),
            "label": [labeling.labels[int(s)].value for s in path],
        }
    )


def method_comparison(
    by_method: Dict[str, Sequence[Patch]], quantile: float = 0.05, n_min: int = 10
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Patch-length CCDF and Hill exponent per decoding method and label

    Returns:
        (ccdf table with columns method, label, value, ccdf;
         Hill table with columns method, label, n, exponent, ci_low, ci_high, note)
    """
    ccdf_frames = []
    hill_rows = []
    for method, patches in by_method.items():
        for label in (Label.BUY, Label.NEUTRAL, Label.SELL):
            lengths = _values(filter_min_length(_select(patches, label.value), n_min), "N_tot")
            row: Dict[str, Any] = {"method": method, "label": label.value, "n": int(lengths.size)}
            if lengths.size:
                frame = empirical_ccdf(lengths)
                frame.insert(0, "label", label.value)
                frame.insert(0, "method", method)
                ccdf_frames.append(frame)
            try:
                estimate = hill_estimator(lengths, quantile) if lengths.size else None
                if estimate is None:
                    raise DomainError("no patches")
                row.update(
                    exponent=estimate.exponent, ci_low=estimate.ci_low,
                    ci_high=estimate.ci_high, note="",
                )
            except HiddenOrderError as e:
                row.update(exponent=np.nan, ci_low=np.nan, ci_high=np.nan, note=str(e))
            hill_rows.append(row)
    ccdf = pd.concat(ccdf_frames, ignore_index=True) if ccdf_frames else pd.DataFrame()
    return ccdf, pd.DataFrame(hill_rows)


def package_versions() -> Dict[str, str]:
    versions = {"hidden-order-hmm": __version__}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


class RunDirectory:
    """Atomic writer for one run's outputs; tracks row counts for the manifest"""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.row_counts: Dict[str, int] = {}

    def path(self, name: str) -> Path:
        return self.root / name

    def write_table(self, name: str, frame: pd.DataFrame) -> Path:
        target = self.path(name)
        write_csv_atomic(frame, target)
        self.row_counts[name] = int(len(frame))
        logger.info(f"Wrote {target} ({len(frame)} rows)")
        return target

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        target = self.path(name)
        write_json_atomic(target, payload)
        logger.info(f"Wrote {target}")
        return target

    def write_tables(self, tables: Dict[str, pd.DataFrame], prefix: str = "") -> None:
        for stem, frame in sorted(tables.items()):
            self.write_table(f"{prefix}{stem}.csv", frame)

    def write_manifest(
        self,
        config_echo: Dict[str, Any],
        config_hash: str,
        seed: int,
        extra: Optional[Dict[str, Any]] = None,
    ) -> Path:
        payload = {
            "config": config_echo,
            "config_hash": config_hash,
            "seed": seed,
            "versions": package_versions(),
            "row_counts": dict(sorted(self.row_counts.items())),
        }
        if extra:
            payload.update(extra)
        failed = self.path("FAILED.json")
        if failed.exists():
            failed.unlink()
        return self.write_json("manifest.json", payload)

    def write_failure(self, stage: str, error: BaseException, outputs: Iterable[str] = ()) -> Path:
        payload = {
            "status": "failed",
            "stage": stage,
            "error_type": type(error).__name__,
            "error": str(error),
            "outputs": sorted(outputs),
        }
        logger.error(f"Run failed during {stage}: {error}")
        return self.write_json("FAILED.json", payload)
