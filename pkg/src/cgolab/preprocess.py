"""Sample construction: longevity filter, monthly universe, gap filling,
winsorization and cross-sectional standardization.

Returns are deliberately exempt from any filling: an interpolated
return would be fabricated P&L and would leak into every estimator
downstream.  Prices/volumes/cash flow are interpolated across short
interior gaps instead, and flags are forward-filled, both capped at
``max_ffill_gap`` consecutive missing months.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .errors import EmptyPanelError, InsufficientDataError, ZeroDispersionError
from .panel import StockPanel


@dataclass(frozen=True)
class UniverseConfig:
    """Eligibility thresholds and cleaning knobs for sample construction."""

    min_history_years: float = 10.0
    min_price: float = 5.0
    exclude_blacklisted: bool = True
    exclude_untradable: bool = True
    winsor_lower: float = 0.01
    winsor_upper: float = 0.99
    max_ffill_gap: int = 3
    normalize_features: bool = False

    def __post_init__(self):
        if not 0.0 <= self.winsor_lower < self.winsor_upper <= 1.0:
            raise ValueError("winsorization quantiles must satisfy 0 <= lower < upper <= 1")
        if self.min_history_years <= 5:
            # the overhang measure and the 5-year proxies consume 5 years of lags
            raise ValueError("min_history_years must exceed 5")


def apply_longevity_filter(panel: StockPanel, config: UniverseConfig) -> StockPanel:
    """Drop stocks whose monthly-return history spans less than the minimum.

    The span is measured from the first to the last non-missing monthly
    return; the threshold is inclusive (exactly ``min_history_years``
    is retained).
    """
    ret = panel.monthly_return
    keep = []
    for stock in ret.columns:
        obs = np.flatnonzero(ret[stock].notna().to_numpy())
        if obs.size == 0:
            continue
        span_months = int(obs[-1] - obs[0])
        if span_months / 12.0 >= config.min_history_years:
            keep.append(stock)
    if not keep:
        raise EmptyPanelError("no stock satisfies the longevity requirement")

    def sel(frame):
        return frame[keep]

    return replace(
        panel,
        weekly_close=sel(panel.weekly_close),
        weekly_volume=sel(panel.weekly_volume),
        weekly_shares=sel(panel.weekly_shares),
        daily_return=sel(panel.daily_return),
        monthly_return=sel(panel.monthly_return),
        monthly_close=sel(panel.monthly_close),
        monthly_cap=sel(panel.monthly_cap),
        monthly_volume=sel(panel.monthly_volume),
        monthly_blacklisted=sel(panel.monthly_blacklisted),
        monthly_tradable=sel(panel.monthly_tradable),
        monthly_cashflow=sel(panel.monthly_cashflow),
        meta=panel.meta.loc[keep],
    )


def monthly_universe(panel: StockPanel, month, config: UniverseConfig) -> set[str]:
    """Stocks eligible at the end of ``month`` for next-month portfolios/regressions.

    Eligibility: month-end close at or above the price floor, not
    blacklisted, tradable, and a non-missing month return.  A missing
    flag is treated conservatively as ineligible.
    """
    month = pd.Period(month, freq="M")
    if month not in panel.months:
        raise KeyError(f"month {month} outside the loaded panel")
    close = panel.monthly_close.loc[month]
    ret = panel.monthly_return.loc[month]
    eligible = close.notna() & (close >= config.min_price) & ret.notna()
    if config.exclude_blacklisted:
        black = panel.monthly_blacklisted.loc[month]
        eligible &= black.notna() & (black == 0)
    if config.exclude_untradable:
        trad = panel.monthly_tradable.loc[month]
        eligible &= trad.notna() & (trad == 1)
    return set(eligible.index[eligible])


def _interp_interior(col: np.ndarray, max_gap: int) -> np.ndarray:
    obs = np.flatnonzero(~np.isnan(col))
    if obs.size < 2:
        return col
    out = col
    gaps = np.diff(obs)
    for k in np.flatnonzero((gaps > 1) & (gaps <= max_gap + 1)):
        a, b = obs[k], obs[k + 1]
        if out is col:
            out = col.copy()
        out[a + 1:b] = np.interp(np.arange(a + 1, b), [a, b], [col[a], col[b]])
    return out


def _ffill_interior(col: np.ndarray, max_gap: int) -> np.ndarray:
    obs = np.flatnonzero(~np.isnan(col))
    if obs.size < 2:
        return col
    out = col
    gaps = np.diff(obs)
    for k in np.flatnonzero((gaps > 1) & (gaps <= max_gap + 1)):
        a, b = obs[k], obs[k + 1]
        if out is col:
            out = col.copy()
        out[a + 1:b] = col[a]
    return out


def _fill_frame(frame: pd.DataFrame, max_gap: int, how) -> pd.DataFrame:
    values = frame.to_numpy(dtype=float, copy=True)
    for j in range(values.shape[1]):
        values[:, j] = how(values[:, j], max_gap)
    return pd.DataFrame(values, index=frame.index, columns=frame.columns)


def fill_missing(panel: StockPanel, config: UniverseConfig) -> StockPanel:
    """Fill short interior gaps: linear interpolation for continuous series,
    forward fill for flags.  Leading/trailing missing stretches and gaps
    longer than ``max_ffill_gap`` stay missing.  Returns are never filled.
    """
    g = config.max_ffill_gap
    return replace(
        panel,
        weekly_close=_fill_frame(panel.weekly_close, g, _interp_interior),
        weekly_volume=_fill_frame(panel.weekly_volume, g, _interp_interior),
        weekly_shares=_fill_frame(panel.weekly_shares, g, _interp_interior),
        monthly_close=_fill_frame(panel.monthly_close, g, _interp_interior),
        monthly_cap=_fill_frame(panel.monthly_cap, g, _interp_interior),
        monthly_volume=_fill_frame(panel.monthly_volume, g, _interp_interior),
        monthly_cashflow=_fill_frame(panel.monthly_cashflow, g, _interp_interior),
        monthly_blacklisted=_fill_frame(panel.monthly_blacklisted, g, _ffill_interior),
        monthly_tradable=_fill_frame(panel.monthly_tradable, g, _ffill_interior),
    )


def winsorize_cross_section(values, lower: float = 0.01, upper: float = 0.99):
    """Clip a cross-section at its empirical quantiles.

    Quantiles use linear interpolation between order statistics, so a
    1..100 integer cross-section clips to [1.99, 99.01] at (0.01, 0.99).
    Missing values pass through untouched.
    """
    arr = np.asarray(values, dtype=float)
    finite = arr[~np.isnan(arr)]
    if finite.size < 2:
        raise InsufficientDataError("winsorization needs at least 2 non-missing values")
    lo = np.quantile(finite, lower)
    hi = np.quantile(finite, upper)
    out = np.clip(arr, lo, hi)
    if isinstance(values, pd.Series):
        return pd.Series(out, index=values.index, name=values.name)
    return out


def zscore_cross_section(values):
    """Standardize a cross-section to mean 0, sample sd 1 over non-missing entries."""
    arr = np.asarray(values, dtype=float)
    finite = arr[~np.isnan(arr)]
    if finite.size < 2:
        raise InsufficientDataError("z-scoring needs at least 2 non-missing values")
    sd = finite.std(ddof=1)
    if sd == 0.0:
        raise ZeroDispersionError("z-scoring a constant cross-section")
    out = (arr - finite.mean()) / sd
    if isinstance(values, pd.Series):
        return pd.Series(out, index=values.index, name=values.name)
    return out
