"""Dependent double sorts: overhang quintiles, then risk-proxy quintiles
within each overhang group, value-weighted one-month holding returns,
high-minus-low spreads and the diff-in-diff across overhang extremes.

Portfolios form at the end of month t from month-t signals and
month-t market caps, and hold through month t+1; months where any
overhang quintile has fewer than five members are skipped whole so the
5x5 geometry never degenerates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import InsufficientDataError
from .fama_macbeth import capped_t, hac_ols, newey_west_se
from .panel import StockPanel
from .preprocess import UniverseConfig, monthly_universe

log = logging.getLogger(__name__)

N_GROUPS = 5
COLUMN_LABELS = tuple(f"CGO{i}" for i in range(1, N_GROUPS + 1))


@dataclass(frozen=True)
class SpreadStats:
    """Time-series summary of one spread column."""

    mean_return: float
    t_stat: float
    ff3_alpha: float
    alpha_t_stat: float
    n_months: int


@dataclass(frozen=True)
class DoubleSortTable:
    """Everything behind one proxy's portfolio table.

    ``cell_returns``/``cell_counts`` are (n_months, 5, 5) arrays indexed
    [month, proxy group - 1, overhang group - 1]; returns are percent
    per month.  ``spreads`` holds the per-column P5-P1 series and
    ``diff_in_diff`` its CGO5-CGO1 difference, identical by
    construction to spreads.CGO5 - spreads.CGO1.
    """

    proxy_name: str
    months: list
    skipped: list
    cell_returns: np.ndarray
    cell_counts: np.ndarray
    spreads: pd.DataFrame
    diff_in_diff: pd.Series
    mean_grid: np.ndarray
    mean_counts: np.ndarray
    col_stats: dict
    nw_lag: int


def quintile_assign(values: pd.Series) -> pd.Series:
    """Ascending quintile groups 1..5 over the defined values.

    A value with zero-based rank r among n sorted values lands in group
    floor(5r/n) + 1; ties break by stock id so the assignment is
    deterministic.
    """
    defined = values.dropna()
    n = len(defined)
    if n < N_GROUPS:
        raise InsufficientDataError(f"{n} defined values; need {N_GROUPS}")
    ids = defined.index.to_numpy(dtype=object).astype(str)
    order = np.lexsort((ids, defined.to_numpy(dtype=float)))
    groups = np.empty(n, dtype=np.int64)
    groups[order] = np.floor(N_GROUPS * np.arange(n) / n).astype(np.int64) + 1
    return pd.Series(groups, index=defined.index)


def dependent_sort(cgo: pd.Series, proxy: pd.Series) -> dict[tuple[int, int], list]:
    """25 portfolios: overhang quintiles first, proxy quintiles within each.

    Only stocks with both signals defined participate.  Raises
    :class:`InsufficientDataError` when any overhang group would have
    fewer than five members (the caller skips that month).
    """
    both = cgo.dropna().index.intersection(proxy.dropna().index)
    cgo_groups = quintile_assign(cgo[both])
    cells: dict[tuple[int, int], list] = {}
    for g in range(1, N_GROUPS + 1):
        members = cgo_groups.index[cgo_groups == g]
        if len(members) < N_GROUPS:
            raise InsufficientDataError(
                f"overhang group {g} has {len(members)} members; need {N_GROUPS}"
            )
        proxy_groups = quintile_assign(proxy[members])
        for h in range(1, N_GROUPS + 1):
            cells[(g, h)] = sorted(proxy_groups.index[proxy_groups == h])
    return cells


def _vw_from_rows(caps: pd.Series, rets: pd.Series, rf: float, members) -> float:
    members = list(members)
    if not members:
        raise InsufficientDataError("empty portfolio")
    c = caps.reindex(members).to_numpy(dtype=float)
    r = rets.reindex(members).to_numpy(dtype=float)
    ok = ~np.isnan(c) & (c > 0) & ~np.isnan(r)
    if not ok.any():
        raise InsufficientDataError("no member has a holding-month return")
    w = c[ok] / c[ok].sum()
    return float(np.dot(w, r[ok] - rf) * 100.0)


def vw_excess_return(panel: StockPanel, members, holding_month) -> float:
    """Value-weighted excess return of a portfolio over its holding month,
    in percent.

    Weights are formation-month (t = holding - 1) market caps; members
    whose holding-month return is missing are dropped and the weights
    renormalized.
    """
    holding = pd.Period(holding_month, freq="M")
    formation = holding - 1
    return _vw_from_rows(
        panel.monthly_cap.loc[formation],
        panel.monthly_return.loc[holding],
        float(panel.factors["risk_free"].loc[holding]),
        members,
    )


def _ff3_alpha(series: pd.Series, factors: pd.DataFrame, nw_lag: int) -> tuple[float, float]:
    """Intercept of the spread on (mkt_excess, smb, hml), HAC t-statistic.

    Factors are scaled to percent to match the spread units.  Constant
    factor columns carry no information and are dropped (they would
    only duplicate the intercept).
    """
    fac = factors.reindex(series.index)
    cols = [
        fac[name].to_numpy(dtype=float) * 100.0
        for name in ("mkt_excess", "smb", "hml")
        if fac[name].std() > 0.0
    ]
    X = np.column_stack([np.ones(len(series))] + cols)
    coef, se = hac_ols(series.to_numpy(dtype=float), X, nw_lag)
    return float(coef[0]), capped_t(float(coef[0]), float(se[0]))


def spread_stats(series: pd.Series, factors: pd.DataFrame, *, nw_lag: int = 4,
                 min_months: int = 24) -> SpreadStats:
    """Mean, NW t, FF3 alpha and alpha t for one monthly percent series."""
    series = series.dropna()
    if len(series) < min_months:
        raise InsufficientDataError(f"{len(series)} spread months; need {min_months}")
    mean = float(series.mean())
    t = capped_t(mean, newey_west_se(series.to_numpy(dtype=float), min(nw_lag, len(series) - 1)))
    alpha, alpha_t = _ff3_alpha(series, factors, nw_lag)
    return SpreadStats(mean_return=mean, t_stat=t, ff3_alpha=alpha,
                       alpha_t_stat=alpha_t, n_months=len(series))


def build_table(
    panel: StockPanel,
    cgo_monthly: pd.DataFrame,
    proxy_frame: pd.DataFrame,
    proxy_name: str,
    formation_months,
    universe_config: UniverseConfig,
    *,
    nw_lag: int = 4,
    min_months: int = 24,
) -> DoubleSortTable:
    """Run the dependent double sort month by month and summarize."""
    used = []
    skipped = []
    returns = []
    counts = []
    for month in formation_months:
        month = pd.Period(month, freq="M")
        if month not in cgo_monthly.index or month not in proxy_frame.index:
            skipped.append((month, "no signal row"))
            continue
        universe = sorted(monthly_universe(panel, month, universe_config))
        cgo = cgo_monthly.loc[month].reindex(universe)
        proxy = proxy_frame.loc[month].reindex(universe)
        try:
            cells = dependent_sort(cgo, proxy)
        except InsufficientDataError as exc:
            skipped.append((month, str(exc)))
            log.info("proxy %s: skipped %s (%s)", proxy_name, month, exc)
            continue
        caps = panel.monthly_cap.loc[month]
        rets = panel.monthly_return.loc[month + 1]
        rf = float(panel.factors["risk_free"].loc[month + 1])
        grid = np.full((N_GROUPS, N_GROUPS), np.nan)
        cnt = np.zeros((N_GROUPS, N_GROUPS), dtype=np.int64)
        for (g, h), members in cells.items():
            cnt[h - 1, g - 1] = len(members)
            try:
                grid[h - 1, g - 1] = _vw_from_rows(caps, rets, rf, members)
            except InsufficientDataError:
                pass
        used.append(month)
        returns.append(grid)
        counts.append(cnt)

    if not used:
        raise InsufficientDataError(f"no usable months for proxy {proxy_name}")
    cell_returns = np.stack(returns)
    cell_counts = np.stack(counts)
    spreads = pd.DataFrame(
        cell_returns[:, N_GROUPS - 1, :] - cell_returns[:, 0, :],
        index=pd.PeriodIndex(used, freq="M"), columns=list(COLUMN_LABELS),
    )
    diff = spreads["CGO5"] - spreads["CGO1"]

    col_stats = {}
    for label in COLUMN_LABELS:
        col_stats[label] = spread_stats(
            spreads[label], panel.factors, nw_lag=nw_lag, min_months=min_months
        )
    col_stats["diff"] = spread_stats(diff, panel.factors, nw_lag=nw_lag, min_months=min_months)

    with np.errstate(invalid="ignore"):
        mean_grid = np.nanmean(cell_returns, axis=0)
    mean_counts = cell_counts.mean(axis=0)

    return DoubleSortTable(
        proxy_name=proxy_name,
        months=used,
        skipped=skipped,
        cell_returns=cell_returns,
        cell_counts=cell_counts,
        spreads=spreads,
        diff_in_diff=diff,
        mean_grid=mean_grid,
        mean_counts=mean_counts,
        col_stats=col_stats,
        nw_lag=nw_lag,
    )


def format_double_sort_table(table: DoubleSortTable, *, full_grid: bool = False) -> str:
    """Aligned text table in the published layout: P1/P3/P5 rows,
    CGO1/CGO3/CGO5 columns, spread and FF3-alpha rows with NW
    t-statistics, and the diff-in-diff column.
    """
    show_cols = [0, 2, 4] if not full_grid else list(range(N_GROUPS))
    show_rows = [0, 2, 4] if not full_grid else list(range(N_GROUPS))
    col_names = [COLUMN_LABELS[j] for j in show_cols]
    width = 12
    lines = [
        f"# Dependent double sort, proxy = {table.proxy_name}",
        f"# value-weighted excess returns, percent per month; NW lag {table.nw_lag}; "
        f"{len(table.months)} months, {len(table.skipped)} skipped",
        "",
        "Portfolio".ljust(width) + "".join(c.rjust(width) for c in col_names) + "Diff-in-Diff".rjust(14),
    ]
    for i in show_rows:
        cells = "".join(f"{table.mean_grid[i, j]:.3f}".rjust(width) for j in show_cols)
        lines.append(f"P{i + 1}".ljust(width) + cells)

    def srow(label, getter, paren=False):
        cells = []
        for j in show_cols:
            v = getter(table.col_stats[COLUMN_LABELS[j]])
            cells.append((f"({v:.2f})" if paren else f"{v:.3f}").rjust(width))
        v = getter(table.col_stats["diff"])
        cells.append((f"({v:.2f})" if paren else f"{v:.3f}").rjust(14))
        lines.append(label.ljust(width) + "".join(cells))

    srow("P5 - P1", lambda s: s.mean_return)
    srow("t-stat", lambda s: s.t_stat, paren=True)
    srow("FF3-a", lambda s: s.ff3_alpha)
    srow("t-stat", lambda s: s.alpha_t_stat, paren=True)
    return "\n".join(lines) + "\n"


def double_sort_csv_rows(table: DoubleSortTable, *, full_grid: bool = False):
    """Long-format rows mirroring the text table; the full grid adds all
    25 cell means and average member counts.
    """
    rows = [("proxy", "row", "column", "value")]
    show = range(N_GROUPS) if full_grid else (0, 2, 4)
    for i in show:
        for j in show:
            rows.append((table.proxy_name, f"P{i + 1}", COLUMN_LABELS[j], f"{table.mean_grid[i, j]:.6f}"))
            if full_grid:
                rows.append((
                    table.proxy_name, f"P{i + 1}_count", COLUMN_LABELS[j],
                    f"{table.mean_counts[i, j]:.2f}",
                ))
    for label in (*COLUMN_LABELS, "diff"):
        if not full_grid and label in ("CGO2", "CGO4"):
            continue
        s = table.col_stats[label]
        col = "Diff-in-Diff" if label == "diff" else label
        rows.append((table.proxy_name, "P5-P1", col, f"{s.mean_return:.6f}"))
        rows.append((table.proxy_name, "t", col, f"{s.t_stat:.4f}"))
        rows.append((table.proxy_name, "FF3-alpha", col, f"{s.ff3_alpha:.6f}"))
        rows.append((table.proxy_name, "alpha_t", col, f"{s.alpha_t_stat:.4f}"))
    return rows
