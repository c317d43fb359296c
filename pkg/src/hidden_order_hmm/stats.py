"""
Statistics

Hill tail-exponent estimation, empirical CCDF and PDF, binned conditional
means, a Jarque-Bera lognormality test and the trend-conditioned buy/sell
asymmetry regressions.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats as sps

from .errors import DomainError, NumericError
from .patches import Label, Patch
from .trades import TradingCalendar

logger = logging.getLogger(__name__)

Z_95 = 1.96
MIN_HILL_K = 20
MIN_JB_SAMPLES = 30
JB_LEVEL = 0.01
CONSTANT_TOLERANCE = 1e-9
ASYMMETRY_METRICS = ("count", "mean_length", "market_order_fraction", "participation")


@dataclass(frozen=True)
class HillEstimate:
    exponent: float
    k: int
    quantile: float
    threshold: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _positive(samples: Sequence[float], name: str = "samples") -> np.ndarray:
    values = np.asarray(samples, dtype=np.float64).ravel()
    if values.size == 0:
        raise DomainError(f"{name} must not be empty")
    if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
        raise DomainError(f"{name} must be finite and strictly positive")
    return values


def hill_estimator(
    samples: Sequence[float],
    quantile: float = 0.05,
    *,
    k: Optional[int] = None,
    min_k: int = MIN_HILL_K,
) -> HillEstimate:
    """Hill estimate of the CCDF tail exponent from the top order statistics

    With descending order statistics x_(1) >= x_(2) >= ..., the estimate is
    k / sum_{i<=k} ln(x_(i) / x_(k+1)) with k = floor(quantile * n) unless k is
    given. The 95% interval is the asymptotic normal one, exponent * (1 +- 1.96/sqrt(k)).

    Raises:
        DomainError: non-positive samples, k < min_k, or k >= n
        NumericError: all top-k samples equal the threshold
    """
    values = _positive(samples)
    n = values.size
    if k is None:
        if not 0.0 < quantile < 1.0:
            raise DomainError(f"quantile must lie in (0, 1), got {quantile}")
        k = int(np.floor(quantile * n))
    if k < min_k:
        raise DomainError(f"Hill estimate needs k >= {min_k} tail samples, got k={k} (n={n})")
    if k >= n:
        raise DomainError(f"k={k} must be below the sample size {n}")
    descending = np.sort(values)[::-1]
    threshold = descending[k]
    denominator = float(np.sum(np.log(descending[:k] / threshold)))
    if denominator <= 0.0:
        raise NumericError("Hill denominator is zero: the tail samples are all equal")
    exponent = k / denominator
    half = Z_95 * exponent / np.sqrt(k)
    return HillEstimate(
        exponent=exponent,
        k=k,
        quantile=quantile,
        threshold=float(threshold),
        ci_low=exponent - half,
        ci_high=exponent + half,
    )


def empirical_ccdf(samples: Sequence[float]) -> pd.DataFrame:
    """P(X >= value) at every distinct sample value (columns value, ccdf)"""
    values = np.asarray(samples, dtype=np.float64).ravel()
    if values.size == 0:
        raise DomainError("CCDF of an empty sample")
    distinct, counts = np.unique(values, return_counts=True)
    at_least = values.size - np.concatenate(([0], np.cumsum(counts)[:-1]))
    return pd.DataFrame({"value": distinct, "ccdf": at_least / values.size})


def _edges(values: np.ndarray, binning: str, num_bins: int, lo=None, hi=None) -> np.ndarray:
    lo = values.min() if lo is None else lo
    hi = values.max() if hi is None else hi
    if binning == "log":
        if lo <= 0.0:
            raise DomainError("Logarithmic bins need strictly positive values")
        if lo == hi:
            return np.array([lo, hi * (1.0 + 1e-12)])
        return np.geomspace(lo, hi, num_bins + 1)
    if binning != "linear":
        raise DomainError(f"Unknown binning {binning!r}")
    if lo == hi:
        return np.array([lo, hi + max(abs(hi) * 1e-12, 1e-12)])
    return np.linspace(lo, hi, num_bins + 1)


def _centers(edges: np.ndarray, binning: str) -> np.ndarray:
    if binning == "log":
        return np.sqrt(edges[:-1] * edges[1:])
    return 0.5 * (edges[:-1] + edges[1:])


def _bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # last bin is closed on the right
    return np.clip(np.searchsorted(edges, values, side="right") - 1, 0, edges.size - 2)


def empirical_pdf(
    samples: Sequence[float],
    num_bins: int = 20,
    binning: Literal["linear", "log"] = "linear",
    value_range: Optional[tuple] = None,
) -> pd.DataFrame:
    """Density histogram (columns bin_left, bin_right, bin_center, density, count)"""
    values = np.asarray(samples, dtype=np.float64).ravel()
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise DomainError("PDF of an empty sample")
    lo, hi = value_range if value_range is not None else (None, None)
    edges = _edges(values, binning, num_bins, lo, hi)
    counts, _ = np.histogram(values, bins=edges)
    widths = np.diff(edges)
    return pd.DataFrame(
        {
            "bin_left": edges[:-1],
            "bin_right": edges[1:],
            "bin_center": _centers(edges, binning),
            "density": counts / (counts.sum() * widths) if counts.sum() else 0.0,
            "count": counts,
        }
    )


def conditional_mean_binned(
    x: Sequence[float],
    y: Sequence[float],
    binning: Literal["linear", "log"] = "log",
    num_bins: int = 20,
) -> pd.DataFrame:
    """E[y | x] over bins of x with standard errors sd / sqrt(count)

    Empty bins are omitted; a single-observation bin reports standard error 0.
    Pairs with a non-finite y are ignored.

    Returns:
        DataFrame with columns bin_center, mean, standard_error, count
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise DomainError(f"x and y differ in length ({x.size} vs {y.size})")
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    if x.size == 0:
        raise DomainError("Conditional mean needs at least one (x, y) pair")
    edges = _edges(x, binning, num_bins)
    frame = pd.DataFrame({"bin": _bin_index(x, edges), "y": y})
    grouped = frame.groupby("bin", sort=True)["y"]
    summary = grouped.agg(["mean", "count"])
    sd = grouped.std(ddof=1).fillna(0.0)
    centers = _centers(edges, binning)
    return pd.DataFrame(
        {
            "bin_center": centers[summary.index.to_numpy()],
            "mean": summary["mean"].to_numpy(),
            "standard_error": (sd / np.sqrt(summary["count"])).to_numpy(),
            "count": summary["count"].to_numpy(dtype=np.int64),
        }
    )


@dataclass(frozen=True)
class JarqueBeraResult:
    statistic: float
    p_value: float
    reject_at_0_01: bool
    n: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def jarque_bera_lognormal(samples: Sequence[float]) -> JarqueBeraResult:
    """Jarque-Bera normality test applied to the natural logs of the samples

    Raises:
        DomainError: fewer than 30 samples or a non-positive sample
    """
    values = _positive(samples)
    if values.size < MIN_JB_SAMPLES:
        raise DomainError(f"Jarque-Bera needs at least {MIN_JB_SAMPLES} samples, got {values.size}")
    result = sps.jarque_bera(np.log(values))
    statistic = float(result.statistic)
    p_value = float(result.pvalue)
    return JarqueBeraResult(
        statistic=statistic,
        p_value=p_value,
        reject_at_0_01=p_value < JB_LEVEL,
        n=int(values.size),
    )


@dataclass
class TrendWindow:
    """One calendar month: trend ratio x and buy/sell patch aggregates"""

    window: str
    n_returns: int
    mean_return: float
    volatility: float
    x: float
    buy: Dict[str, float] = field(default_factory=dict)
    sell: Dict[str, float] = field(default_factory=dict)

    def delta(self, metric: str) -> float:
        return self.buy[metric] - self.sell[metric]

    def to_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {
            "window": self.window,
            "n_returns": self.n_returns,
            "mean_return": self.mean_return,
            "volatility": self.volatility,
            "x": self.x,
        }
        for metric in ASYMMETRY_METRICS:
            row[f"buy_{metric}"] = self.buy[metric]
            row[f"sell_{metric}"] = self.sell[metric]
            row[f"delta_{metric}"] = self.delta(metric)
        return row


@dataclass
class AsymmetryResult:
    windows: List[TrendWindow]
    regressions: pd.DataFrame
    excluded_windows: int
    degenerate: bool

    def windows_frame(self) -> pd.DataFrame:
        return pd.DataFrame([window.to_row() for window in self.windows])


def monthly_trend(daily_closes: pd.Series) -> Tuple[pd.DataFrame, int]:
    """Per calendar month: close-to-close log-return mean, sd and x = mean / sd

    A return is attributed to the month of its closing day. Months with fewer
    than two returns or zero volatility are dropped and counted.

    Returns:
        (DataFrame indexed by "YYYY-MM" with n_returns, mean_return, volatility,
        x; number of excluded months)
    """
    closes = daily_closes.sort_index()
    if (closes <= 0).any():
        raise DomainError("Daily closes must be positive")
    returns = np.log(closes).diff().dropna()
    months = pd.DatetimeIndex(returns.index).strftime("%Y-%m")
    grouped = returns.groupby(months)
    table = pd.DataFrame(
        {
            "n_returns": grouped.size(),
            "mean_return": grouped.mean(),
            "volatility": grouped.std(ddof=1),
        }
    )
    valid = (table["n_returns"] >= 2) & (table["volatility"] > 0.0)
    excluded = int((~valid).sum())
    table = table.loc[valid].copy()
    table["x"] = table["mean_return"] / table["volatility"]
    return table, excluded


def _patch_month(t_first: float, calendar: Optional[TradingCalendar]) -> str:
    # the session date of the first trade, matching how daily closes are dated
    if calendar is not None:
        session = int(calendar.session_index(np.array([t_first]))[0])
        if session >= 0:
            return calendar.dates[session].strftime("%Y-%m")
    return pd.Timestamp(t_first, unit="s", tz="UTC").strftime("%Y-%m")


def _patch_aggregates(
    patches: Sequence[Patch], n_min: int, calendar: Optional[TradingCalendar] = None
) -> pd.DataFrame:
    rows = [
        {
            "window": _patch_month(p.t_first, calendar),
            "label": p.label.value,
            "length": p.N_tot,
            "market_order_fraction": p.market_order_fraction,
            "participation": p.participation_rate,
        }
        for p in patches
        if p.label.directional and p.N_tot >= n_min
    ]
    if not rows:
        return pd.DataFrame(
            columns=["window", "label", "count", "mean_length", "market_order_fraction",
                     "participation"]
        )
    frame = pd.DataFrame(rows)
    grouped = frame.groupby(["window", "label"])
    return grouped.agg(
        count=("length", "size"),
        mean_length=("length", "mean"),
        market_order_fraction=("market_order_fraction", "mean"),
        participation=("participation", "mean"),
    ).reset_index()


def _side(aggregates: pd.DataFrame, window: str, label: Label) -> Dict[str, float]:
    match = aggregates[(aggregates["window"] == window) & (aggregates["label"] == label.value)]
    if match.empty:
        return {
            "count": 0.0,
            "mean_length": np.nan,
            "market_order_fraction": np.nan,
            "participation": np.nan,
        }
    row = match.iloc[0]
    return {metric: float(row[metric]) for metric in ASYMMETRY_METRICS}


def _constant(values: np.ndarray) -> bool:
    # equal up to rounding in the log-return arithmetic
    return bool(np.ptp(values) <= CONSTANT_TOLERANCE * max(1.0, float(np.abs(values).max())))


def _regress(x: np.ndarray, y: np.ndarray, metric: str) -> Dict[str, Any]:
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    row: Dict[str, Any] = {
        "metric": metric,
        "n_windows": int(x.size),
        "slope": np.nan,
        "intercept": np.nan,
        "correlation": np.nan,
        "p_value": np.nan,
        "intercept_p_value": np.nan,
        "degenerate": True,
    }
    if x.size < 2 or _constant(x) or _constant(y):
        return row
    fit = sps.linregress(x, y)
    dof = x.size - 2
    if fit.intercept_stderr > 0:
        t_intercept = fit.intercept / fit.intercept_stderr
        intercept_p = float(2.0 * sps.t.sf(abs(t_intercept), dof))
    else:
        intercept_p = 0.0
    row.update(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        correlation=float(fit.rvalue),
        p_value=float(fit.pvalue),
        intercept_p_value=intercept_p,
        degenerate=False,
    )
    return row


def asymmetry_by_trend(
    patches: Sequence[Patch],
    daily_closes: pd.Series,
    windowing: Literal["monthly"] = "monthly",
    n_min: int = 10,
    calendar: Optional[TradingCalendar] = None,
) -> AsymmetryResult:
    """Buy-minus-sell patch statistics per month regressed on the trend ratio x

    For every valid month the four deltas (count, mean length, mean market-order
    fraction, mean participation rate) of directional patches with at least
    n_min transactions are computed; each delta is regressed on x by ordinary
    least squares. Months without patches of one side contribute count 0 and
    undefined means, which drop out of the corresponding regressions.

    Args:
        patches: Labeled patches (any members)
        daily_closes: Session closing prices indexed by date
        windowing: Only "monthly" is supported
        n_min: Minimum transactions of a counted patch
        calendar: Dates patches by the session of their first trade; UTC date
            of t_first when omitted

    Returns:
        AsymmetryResult; degenerate is set when x is constant across windows

    Raises:
        DomainError: fewer than two valid windows
    """
    if windowing != "monthly":
        raise DomainError(f"Unsupported windowing {windowing!r}")
    trend, excluded = monthly_trend(daily_closes)
    if excluded:
        logger.warning(
            f"Asymmetry: {excluded} month(s) excluded (fewer than 2 returns or zero volatility)"
        )
    if len(trend) < 2:
        raise DomainError(f"Asymmetry needs at least 2 valid monthly windows, got {len(trend)}")

    aggregates = _patch_aggregates(patches, n_min, calendar)
    windows = [
        TrendWindow(
            window=str(month),
            n_returns=int(row["n_returns"]),
            mean_return=float(row["mean_return"]),
            volatility=float(row["volatility"]),
            x=float(row["x"]),
            buy=_side(aggregates, month, Label.BUY),
            sell=_side(aggregates, month, Label.SELL),
        )
        for month, row in trend.iterrows()
    ]
    x = np.array([window.x for window in windows])
    degenerate = _constant(x)
    if degenerate:
        logger.warning("Asymmetry: trend ratio x is constant across windows; regressions refused")
    rows = [
        _regress(x, np.array([window.delta(metric) for window in windows]), metric)
        for metric in ASYMMETRY_METRICS
    ]
    regressions = pd.DataFrame(rows)
    logger.info(f"Asymmetry over {len(windows)} windows ({excluded} excluded)")
    return AsymmetryResult(
        windows=windows,
        regressions=regressions,
        excluded_windows=excluded,
        degenerate=degenerate,
    )
