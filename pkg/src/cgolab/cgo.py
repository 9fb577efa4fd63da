"""Turnover-weighted reference prices and the capital gains overhang.

For each stock and week t the reference price is a convex combination
of the prior ``lookback_weeks`` closes,

    RP_t = (1/k) * sum_{n=1..T} [ V_{t-n} * prod_{tau=1..n-1} (1 - V_{t-n+tau}) ] * P_{t-n},

where V is weekly turnover (volume / shares outstanding, clamped to
[0, 1]) and k normalizes the weights to sum to one.  The overhang is

    CGO_t = (P_{t-1} - RP_t) / P_{t-1},

sampled monthly as the latest defined weekly value inside each month.

Turnover is clamped because weekly volume can exceed shares
outstanding; V > 1 would flip the sign of the survival factors and
destroy the convex-combination reading of the weights.  Weeks with a
missing price or turnover contribute zero weight and are skipped in
the survival product (no recorded trading moves no shares to a new
cost basis).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InsufficientDataError, UndefinedReferencePriceError
from .panel import StockPanel

DEFAULT_LOOKBACK_WEEKS = 260
DEFAULT_MIN_VALID_WEEKS = 200
DEFAULT_K_FLOOR = 1e-6


@dataclass(frozen=True)
class CgoResult:
    """Weekly turnover/reference-price/overhang frames plus the monthly sample.

    Weekly frames are indexed by week-ending date, ``monthly`` by month
    period; columns are stock ids.  ``weight_mass`` holds the
    pre-normalization weight sum k wherever the reference price is
    defined.
    """

    turnover: pd.DataFrame
    reference_price: pd.DataFrame
    weight_mass: pd.DataFrame
    cgo: pd.DataFrame
    monthly: pd.DataFrame
    lookback_weeks: int
    min_valid_weeks: int
    k_floor: float


def weekly_turnover(volume: float, shares_outstanding: float) -> float:
    """Weekly traded volume as a fraction of shares outstanding, clamped to [0, 1]."""
    if shares_outstanding is None or np.isnan(shares_outstanding) or shares_outstanding <= 0:
        raise ValueError("shares_outstanding must be positive and present")
    return float(np.clip(volume / shares_outstanding, 0.0, 1.0))


def reference_price(
    prices,
    turnovers,
    *,
    min_valid_weeks: int = DEFAULT_MIN_VALID_WEEKS,
    k_floor: float = DEFAULT_K_FLOOR,
) -> tuple[float, float]:
    """Turnover-weighted reference price over a trailing window.

    ``prices`` and ``turnovers`` are aligned vectors ordered most
    recent first (lag 1, lag 2, ..., lag T).  Missing entries in either
    vector contribute zero weight and are skipped in the survival
    product.  Returns ``(rp, k)`` with k the raw weight mass before
    normalization.

    Raises :class:`InsufficientDataError` when fewer than
    ``min_valid_weeks`` lags have both price and turnover, and
    :class:`UndefinedReferencePriceError` when the weight mass falls
    below ``k_floor`` (for example, near-zero turnover throughout).
    """
    p = np.asarray(prices, dtype=float)
    v = np.asarray(turnovers, dtype=float)
    if p.shape != v.shape or p.ndim != 1:
        raise ValueError("prices and turnovers must be aligned 1-d vectors")
    valid = ~np.isnan(p) & ~np.isnan(v)
    if int(valid.sum()) < min_valid_weeks:
        raise InsufficientDataError(
            f"{int(valid.sum())} valid weeks of {p.size}; need {min_valid_weeks}"
        )
    v_eff = np.where(valid, np.clip(v, 0.0, 1.0), 0.0)
    p_eff = np.where(valid, p, 0.0)
    survival = np.concatenate(([1.0], np.cumprod(1.0 - v_eff[:-1])))
    weights = v_eff * survival
    k = float(weights.sum())
    if k < k_floor:
        raise UndefinedReferencePriceError(f"weight mass {k:.3e} below floor {k_floor:.3e}")
    return float(np.dot(weights, p_eff) / k), k


def cgo_weekly(price_prev: float, rp: float) -> float:
    """Overhang for one week: (P_{t-1} - RP_t) / P_{t-1}."""
    if np.isnan(price_prev) or price_prev <= 0:
        raise ValueError("previous-week price must be positive")
    return (price_prev - rp) / price_prev


class ReferencePriceLedger:
    """Prefix recursion for windowed reference prices, one pass per week.

    The full-history weighted sum A_t = sum_{s<t} v_s p_s prod_{u=s+1..t-1}(1-v_u)
    obeys A_{t+1} = A_t (1-v_t) + v_t p_t, and the survival products
    telescope, so the trailing-window numerator is A_t minus the
    window-survival-damped tail A_{t-T}; the weight mass k gets the
    same treatment.  Window survival is tracked as a prefix log sum
    plus a zero counter so that weeks with full turnover (v = 1) wipe
    the tail exactly instead of poisoning a product ratio.

    The synthetic generator pushes weeks incrementally while it builds
    a panel; the engine pushes a finished panel in one loop.  Both
    therefore run the identical float operations.
    """

    def __init__(self, n_stocks: int, capacity: int):
        self.count = 0
        shape = (capacity + 1, n_stocks)
        self._A = np.zeros(shape)
        self._K = np.zeros(shape)
        self._L = np.zeros(shape)
        self._Z = np.zeros(shape, dtype=np.int64)
        self._V = np.zeros(shape, dtype=np.int64)
        self._a = np.zeros(n_stocks)
        self._k = np.zeros(n_stocks)
        self._l = np.zeros(n_stocks)
        self._z = np.zeros(n_stocks, dtype=np.int64)
        self._v = np.zeros(n_stocks, dtype=np.int64)

    def push(self, v_eff: np.ndarray, p_eff: np.ndarray, valid: np.ndarray) -> None:
        """Append one week (missing weeks enter as v=0, p=0, valid=False)."""
        t = self.count
        survive = 1.0 - v_eff
        self._a = self._a * survive + v_eff * p_eff
        self._k = self._k * survive + v_eff
        wiped = survive <= 0.0
        with np.errstate(divide="ignore"):
            self._l = self._l + np.where(wiped, 0.0, np.log1p(-v_eff))
        self._z = self._z + wiped
        self._v = self._v + valid
        self.count = t + 1
        self._A[self.count] = self._a
        self._K[self.count] = self._k
        self._L[self.count] = self._l
        self._Z[self.count] = self._z
        self._V[self.count] = self._v

    def window(self, t: int, lookback: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Numerator, weight mass and valid count of the window ending at
        target week ``t`` (lags 1..lookback, i.e. weeks t-lookback..t-1).
        """
        lo = t - lookback
        if lo < 0 or t > self.count:
            raise ValueError(f"target week {t} outside the pushed range")
        dz = self._Z[t] - self._Z[lo]
        with np.errstate(over="ignore"):
            tail = np.where(dz == 0, np.exp(self._L[t] - self._L[lo]), 0.0)
        num = self._A[t] - tail * self._A[lo]
        k = self._K[t] - tail * self._K[lo]
        n_valid = self._V[t] - self._V[lo]
        return num, k, n_valid


def effective_inputs(close: np.ndarray, volume: np.ndarray, shares: np.ndarray):
    """Clamped turnover plus the zeroed arrays the weight recursion consumes."""
    with np.errstate(invalid="ignore", divide="ignore"):
        turn = volume / np.where(shares > 0, shares, np.nan)
    turn = np.clip(turn, 0.0, 1.0)
    valid = ~np.isnan(close) & ~np.isnan(turn)
    v_eff = np.where(valid, turn, 0.0)
    p_eff = np.where(valid, close, 0.0)
    return turn, valid, v_eff, p_eff


def compute_cgo(
    panel: StockPanel,
    *,
    lookback_weeks: int = DEFAULT_LOOKBACK_WEEKS,
    min_valid_weeks: int = DEFAULT_MIN_VALID_WEEKS,
    k_floor: float = DEFAULT_K_FLOOR,
) -> CgoResult:
    """Weekly turnover, reference price and overhang for every stock, plus
    the monthly sampling (latest defined weekly value inside each month).

    Weeks whose trailing window has fewer than ``min_valid_weeks``
    usable lags, or whose weight mass is below ``k_floor``, get a
    missing reference price and overhang rather than an error.
    """
    weeks = panel.weeks
    close = panel.weekly_close.to_numpy(dtype=float)
    volume = panel.weekly_volume.to_numpy(dtype=float)
    shares = panel.weekly_shares.to_numpy(dtype=float)
    n_weeks, n_stocks = close.shape

    turn, valid, v_eff, p_eff = effective_inputs(close, volume, shares)
    ledger = ReferencePriceLedger(n_stocks, n_weeks)
    for t in range(n_weeks):
        ledger.push(v_eff[t], p_eff[t], valid[t])

    rp = np.full((n_weeks, n_stocks), np.nan)
    mass = np.full((n_weeks, n_stocks), np.nan)
    T = lookback_weeks
    for i in range(T, n_weeks):
        num, k, n_valid = ledger.window(i, T)
        ok = (n_valid >= min_valid_weeks) & (k >= k_floor)
        rp[i, ok] = num[ok] / k[ok]
        mass[i, ok] = k[ok]

    prev_close = np.vstack([np.full((1, n_stocks), np.nan), close[:-1]])
    with np.errstate(invalid="ignore"):
        cgo = np.where(
            ~np.isnan(rp) & (prev_close > 0),
            (prev_close - rp) / prev_close,
            np.nan,
        )

    turnover_frame = pd.DataFrame(turn, index=weeks, columns=panel.stocks)
    rp_frame = pd.DataFrame(rp, index=weeks, columns=panel.stocks)
    mass_frame = pd.DataFrame(mass, index=weeks, columns=panel.stocks)
    cgo_frame = pd.DataFrame(cgo, index=weeks, columns=panel.stocks)
    monthly = cgo_frame.groupby(weeks.to_period("M")).last()
    monthly.index.name = "month"

    return CgoResult(
        turnover=turnover_frame,
        reference_price=rp_frame,
        weight_mass=mass_frame,
        cgo=cgo_frame,
        monthly=monthly,
        lookback_weeks=lookback_weeks,
        min_valid_weeks=min_valid_weeks,
        k_floor=k_floor,
    )


def cgo_monthly(weekly_cgo: pd.Series, month) -> float:
    """Latest defined weekly overhang whose week-end falls inside ``month``.

    NaN when no weekly value in the month is defined.
    """
    month = pd.Period(month, freq="M")
    in_month = weekly_cgo[weekly_cgo.index.to_period("M") == month].dropna()
    if in_month.empty:
        return float("nan")
    return float(in_month.iloc[-1])


def cgo_percentiles(monthly_cgo: pd.DataFrame, month, probs=(0.10, 0.50, 0.90), min_obs: int = 10):
    """Cross-sectional overhang quantiles for one month.

    Uses the same linear rank interpolation as winsorization.  Requires
    at least ``min_obs`` stocks with a defined value.
    """
    month = pd.Period(month, freq="M")
    cross = monthly_cgo.loc[month].dropna()
    if len(cross) < min_obs:
        raise InsufficientDataError(f"{len(cross)} defined values in {month}; need {min_obs}")
    return tuple(float(q) for q in np.quantile(cross.to_numpy(), probs))


def write_weekly_csv(result: CgoResult, path) -> Path:
    """Export stock_id, week_end, turnover, reference_price, cgo rows."""
    path = Path(path)
    labels = [w.strftime("%Y-%m-%d") for w in result.cgo.index]
    t, r, c = (f.to_numpy(dtype=float) for f in
               (result.turnover, result.reference_price, result.cgo))

    def cell(x):
        return "" if np.isnan(x) else repr(float(x))

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("stock_id,week_end,turnover,reference_price,cgo\n")
        for j, stock in enumerate(result.cgo.columns):
            keep = ~(np.isnan(t[:, j]) & np.isnan(r[:, j]) & np.isnan(c[:, j]))
            for i in np.flatnonzero(keep):
                fh.write(f"{stock},{labels[i]},{cell(t[i, j])},{cell(r[i, j])},{cell(c[i, j])}\n")
    return path
