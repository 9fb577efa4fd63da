"""Lagged per-stock risk proxies: beta, return volatility, idiosyncratic
volatility, inverse firm age, and cash-flow volatility.

Every proxy dated at month t depends only on data through the end of
month t.  Rolling windows are the trailing 60 months inclusive of t,
with a 36-observation completeness floor; the age proxy enters as
1/AGE so that, like the others, larger values mean riskier.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InsufficientDataError, RankDeficiencyError
from .panel import StockPanel

PROXY_NAMES = ("beta", "retvol", "ivol", "inv_age", "cfvol")

ROLLING_WINDOW_MONTHS = 60
ROLLING_MIN_OBS = 36
IVOL_MIN_DAYS = 15
CFVOL_TRAILING_YEARS = 5
CFVOL_MIN_OBS = 3
DAYS_PER_YEAR = 365.25


@dataclass(frozen=True)
class ProxyPanel:
    """Monthly proxy values (month period x stock id), one frame per proxy.

    ``metadata`` records estimation choices that matter for
    interpretation, e.g. whether daily factors were ingested or
    flat-distributed from monthly values.
    """

    frames: dict[str, pd.DataFrame]
    metadata: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, name: str) -> pd.DataFrame:
        return self.frames[name]


def beta(stock_excess, market_excess, *, min_obs: int = ROLLING_MIN_OBS) -> float:
    """OLS slope of stock excess returns on market excess returns.

    Uses months where both series are present; requires ``min_obs``
    aligned pairs and positive market variance over those pairs.
    """
    y = np.asarray(stock_excess, dtype=float)
    x = np.asarray(market_excess, dtype=float)
    ok = ~np.isnan(y) & ~np.isnan(x)
    n = int(ok.sum())
    if n < min_obs:
        raise InsufficientDataError(f"{n} aligned months; need {min_obs}")
    xv, yv = x[ok], y[ok]
    if np.all(xv == xv[0]):
        raise InsufficientDataError("market excess return has zero variance in the window")
    xd = xv - xv.mean()
    denom = float(np.dot(xd, xd))
    return float(np.dot(xd, yv - yv.mean()) / denom)


def retvol(returns, *, min_obs: int = ROLLING_MIN_OBS) -> float:
    """Sample standard deviation (ddof=1) of a monthly return window."""
    r = np.asarray(returns, dtype=float)
    r = r[~np.isnan(r)]
    if r.size < min_obs:
        raise InsufficientDataError(f"{r.size} returns; need {min_obs}")
    return float(r.std(ddof=1))


def ivol(daily_returns, daily_factors: pd.DataFrame, *, min_days: int = IVOL_MIN_DAYS) -> float:
    """Residual volatility from a daily three-factor regression.

    Regresses the stock's daily excess return on (mkt_excess, smb, hml)
    with an intercept over one month of days and returns the residual
    standard deviation, sqrt(SSR / (n - rank)).  Zero-variance factor
    columns (e.g. monthly values flat-distributed to days) are absorbed
    by the intercept and dropped; collinearity among the remaining
    columns raises :class:`RankDeficiencyError`.
    """
    r = pd.Series(daily_returns).astype(float)
    frame = pd.concat([r.rename("ret"), daily_factors[["mkt_excess", "smb", "hml", "risk_free"]]], axis=1)
    frame = frame.dropna()
    n = len(frame)
    if n < min_days:
        raise InsufficientDataError(f"{n} complete days; need {min_days}")
    y = frame["ret"].to_numpy() - frame["risk_free"].to_numpy()
    cols = []
    names = []
    for name in ("mkt_excess", "smb", "hml"):
        col = frame[name].to_numpy()
        if col.std() > 0.0:
            cols.append(col)
            names.append(name)
    X = np.column_stack([np.ones(n)] + cols)
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise RankDeficiencyError(names)
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return float(np.sqrt(np.dot(resid, resid) / (n - rank)))


def inv_age(listing_date, month) -> float:
    """Reciprocal of firm age in years at month end (365.25-day years).

    Undefined (raises) for firms younger than one year; such stocks are
    excluded from age sorts.
    """
    month_end = pd.Period(month, freq="M").to_timestamp(how="end").normalize()
    listing = pd.Timestamp(listing_date)
    if pd.isna(listing):
        raise InsufficientDataError("missing listing date")
    age_years = (month_end - listing).days / DAYS_PER_YEAR
    if age_years < 1.0:
        raise InsufficientDataError(f"firm is {age_years:.2f} years old; proxy needs at least 1")
    return 1.0 / age_years


def cfvol(cash_flows, scaler: float, *, min_obs: int = CFVOL_MIN_OBS) -> float:
    """Sample standard deviation of scaled annual cash flow.

    ``cash_flows`` holds up to five trailing annual observations;
    ``scaler`` is the contemporaneous total-assets proxy (market cap in
    this data model) applied to every observation.
    """
    if scaler is None or np.isnan(scaler) or scaler <= 0:
        raise ValueError("scaler must be positive")
    cf = np.asarray(cash_flows, dtype=float)
    cf = cf[~np.isnan(cf)]
    if cf.size < min_obs:
        raise InsufficientDataError(f"{cf.size} annual cash flows; need {min_obs}")
    return float((cf / scaler).std(ddof=1))


def sd_cross_section(window: np.ndarray, min_obs: int) -> np.ndarray:
    """Column-wise two-pass sample sd of a (window x stocks) block, NaN-aware.

    Shared by the rolling driver and the synthetic generator so both
    sides of a planted-effect test see bitwise-identical values.
    """
    mask = ~np.isnan(window)
    n = mask.sum(axis=0)
    vals = np.where(mask, window, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = vals.sum(axis=0) / n
        dev = np.where(mask, window - mean, 0.0)
        var = (dev * dev).sum(axis=0) / (n - 1)
        sd = np.sqrt(var)
    sd[n < max(min_obs, 2)] = np.nan
    return sd


def rolling_retvol(monthly_returns: pd.DataFrame, *, window: int = ROLLING_WINDOW_MONTHS,
                   min_obs: int = ROLLING_MIN_OBS) -> pd.DataFrame:
    """Trailing-window return volatility for every stock and month."""
    values = monthly_returns.to_numpy(dtype=float)
    out = np.full_like(values, np.nan)
    for i in range(values.shape[0]):
        lo = max(0, i - window + 1)
        out[i] = sd_cross_section(values[lo:i + 1], min_obs)
    return pd.DataFrame(out, index=monthly_returns.index, columns=monthly_returns.columns)


def rolling_beta(monthly_returns: pd.DataFrame, factors: pd.DataFrame, *,
                 window: int = ROLLING_WINDOW_MONTHS, min_obs: int = ROLLING_MIN_OBS) -> pd.DataFrame:
    """Trailing-window CAPM slope on excess returns for every stock and month.

    Exact pairwise OLS: all moments are accumulated over the months
    where the stock return is present (the factor series has no gaps
    inside its coverage).
    """
    rf = factors["risk_free"].reindex(monthly_returns.index)
    mkt = factors["mkt_excess"].reindex(monthly_returns.index)
    y = monthly_returns.sub(rf, axis=0).to_numpy(dtype=float)
    x = mkt.to_numpy(dtype=float)[:, None]

    mask = ~np.isnan(y) & ~np.isnan(x)
    y0 = np.where(mask, y, 0.0)
    x0 = np.where(mask, x, 0.0)

    def rsum(a):
        c = np.cumsum(a, axis=0)
        out = c.copy()
        out[window:] = c[window:] - c[:-window]
        return out

    n = rsum(mask.astype(float))
    sx = rsum(x0)
    sy = rsum(y0)
    sxx = rsum(x0 * x0)
    sxy = rsum(x0 * y0)
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = n * sxx - sx * sx
        slope = np.where(denom > 0, (n * sxy - sx * sy) / denom, np.nan)
    slope[n < min_obs] = np.nan
    return pd.DataFrame(slope, index=monthly_returns.index, columns=monthly_returns.columns)


def flat_daily_factors(factors: pd.DataFrame, day_index: pd.DatetimeIndex) -> pd.DataFrame:
    """Fallback daily factor series: each month's value split evenly over
    that month's trading days.  Within-month variation is zero, so an
    idiosyncratic-volatility regression on these collapses to an
    intercept-only fit; ingest a real daily factor file to avoid that.
    """
    months = day_index.to_period("M")
    counts = pd.Series(1, index=day_index).groupby(months).transform("sum").to_numpy()
    out = {}
    for col in ("mkt_excess", "smb", "hml", "risk_free"):
        monthly = factors[col].reindex(months).to_numpy()
        out[col] = monthly / counts
    frame = pd.DataFrame(out, index=day_index)
    frame.index.name = "date"
    return frame


def _ivol_month(day_returns: np.ndarray, fac: np.ndarray, min_days: int) -> np.ndarray:
    """IVOL for every stock over one month of days.

    ``day_returns`` is (days x stocks); ``fac`` is (days x 4) ordered
    mkt_excess, smb, hml, risk_free.  Stocks whose days are all
    complete share one pseudoinverse; ragged stocks fall back to a
    per-stock fit.
    """
    n_days, n_stocks = day_returns.shape
    out = np.full(n_stocks, np.nan)
    fac_ok = ~np.isnan(fac).any(axis=1)
    ret_ok = ~np.isnan(day_returns)
    usable = ret_ok & fac_ok[:, None]
    counts = usable.sum(axis=0)

    def fit(rows, y_cols):
        days = np.flatnonzero(rows)
        F = fac[days]
        cols = [c for c in range(3) if F[:, c].std() > 0.0]
        X = np.column_stack([np.ones(days.size)] + [F[:, c] for c in cols])
        rank = np.linalg.matrix_rank(X)
        if rank < X.shape[1]:
            return None
        Y = day_returns[np.ix_(days, y_cols)] - F[:, 3][:, None]
        coef, _, _, _ = np.linalg.lstsq(X, Y, rcond=None)
        resid = Y - X @ coef
        return np.sqrt((resid * resid).sum(axis=0) / (days.size - rank))

    complete = np.flatnonzero((counts == fac_ok.sum()) & (counts >= min_days))
    if complete.size and fac_ok.sum() >= min_days:
        res = fit(fac_ok, complete)
        if res is not None:
            out[complete] = res
    ragged = np.flatnonzero((counts >= min_days) & (counts < fac_ok.sum()))
    for j in ragged:
        res = fit(usable[:, j], [j])
        if res is not None:
            out[j] = float(res[0])
    return out


def rolling_ivol(panel: StockPanel, *, min_days: int = IVOL_MIN_DAYS) -> tuple[pd.DataFrame, str]:
    """Monthly idiosyncratic volatility frame plus the factor-source tag."""
    days = panel.daily_return.index
    if panel.daily_factors is not None:
        fac_frame = panel.daily_factors.reindex(days)
        source = "daily"
    else:
        fac_frame = flat_daily_factors(panel.factors, days)
        source = "monthly-flat"
    fac = fac_frame[["mkt_excess", "smb", "hml", "risk_free"]].to_numpy(dtype=float)
    returns = panel.daily_return.to_numpy(dtype=float)
    day_months = days.to_period("M")

    out = pd.DataFrame(np.nan, index=panel.months, columns=panel.stocks)
    for month in panel.months:
        rows = day_months == month
        if not rows.any():
            continue
        out.loc[month] = _ivol_month(returns[rows], fac[rows], min_days)
    return out, source


def rolling_inv_age(panel: StockPanel) -> pd.DataFrame:
    """1/AGE for every stock and month; NaN under one year of age."""
    listing = panel.meta["listing_date"]
    listing_days = listing.to_numpy(dtype="datetime64[D]")
    out = np.full((len(panel.months), len(panel.stocks)), np.nan)
    for i, month in enumerate(panel.months):
        month_end = np.datetime64(month.to_timestamp(how="end").normalize(), "D")
        with np.errstate(invalid="ignore"):
            age = (month_end - listing_days).astype(float) / DAYS_PER_YEAR
            out[i] = np.where(age >= 1.0, 1.0 / age, np.nan)
    return pd.DataFrame(out, index=panel.months, columns=panel.stocks)


def rolling_cfvol(panel: StockPanel, *, trailing_years: int = CFVOL_TRAILING_YEARS,
                  min_obs: int = CFVOL_MIN_OBS) -> pd.DataFrame:
    """Scaled cash-flow volatility: sd of the trailing annual observations
    divided by the contemporaneous market cap.

    The annual observation for a calendar year is the last reported
    cash flow within that year (restricted to months <= t for the year
    in progress).
    """
    months = panel.months
    cash = panel.monthly_cashflow
    years = np.array([m.year for m in months])
    year_values = sorted(set(years))
    year_pos = {y: i for i, y in enumerate(year_values)}

    # last reported value per (year, stock), and the within-year running last
    per_year = np.full((len(year_values), len(panel.stocks)), np.nan)
    running = cash.groupby(years).ffill().to_numpy(dtype=float)
    cash_np = cash.to_numpy(dtype=float)
    for i in range(len(months)):
        row = cash_np[i]
        y = year_pos[years[i]]
        seen = ~np.isnan(row)
        per_year[y, seen] = row[seen]

    cap = panel.monthly_cap.to_numpy(dtype=float)
    out = np.full((len(months), len(panel.stocks)), np.nan)
    for i, month in enumerate(months):
        y = year_pos[years[i]]
        lo = max(0, y - trailing_years + 1)
        block = per_year[lo:y].copy() if y > lo else np.empty((0, len(panel.stocks)))
        current = running[i][None, :]
        window = np.vstack([block, current])
        sd = sd_cross_section(window, min_obs)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[i] = np.where(cap[i] > 0, sd / cap[i], np.nan)
    return pd.DataFrame(out, index=months, columns=panel.stocks)


def compute_proxies(panel: StockPanel, names=PROXY_NAMES) -> ProxyPanel:
    """Monthly frames for the requested proxies over the whole panel."""
    frames = {}
    metadata = {}
    for name in names:
        if name == "beta":
            frames[name] = rolling_beta(panel.monthly_return, panel.factors)
        elif name == "retvol":
            frames[name] = rolling_retvol(panel.monthly_return)
        elif name == "ivol":
            frames[name], source = rolling_ivol(panel)
            metadata["ivol_factor_source"] = source
        elif name == "inv_age":
            frames[name] = rolling_inv_age(panel)
        elif name == "cfvol":
            frames[name] = rolling_cfvol(panel)
        else:
            raise KeyError(f"unknown proxy {name!r}; expected one of {PROXY_NAMES}")
    return ProxyPanel(frames=frames, metadata=metadata)


def write_monthly_csv(proxies: ProxyPanel, path) -> Path:
    """Export stock_id, month, and one column per computed proxy."""
    path = Path(path)
    names = list(proxies.frames)
    first = proxies.frames[names[0]]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("stock_id,month," + ",".join(names) + "\n")
        for stock in first.columns:
            cols = {n: proxies.frames[n][stock] for n in names}
            for month in first.index:
                vals = [cols[n].loc[month] for n in names]
                if all(pd.isna(x) for x in vals):
                    continue
                cells = ["" if pd.isna(x) else repr(float(x)) for x in vals]
                fh.write(f"{stock},{month},{','.join(cells)}\n")
    return path
