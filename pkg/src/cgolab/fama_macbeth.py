"""Monthly cross-sectional return regressions with Newey-West inference.

Each formation month t gets one OLS of month-t+1 returns on lagged
characteristics; the coefficient time series is then averaged and its
standard error taken from Bartlett-weighted autocovariances.  Tables
report coefficient means in percent (returns enter as fractions and
means are scaled by 100); the intercept is estimated but not printed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg

from .errors import InsufficientDataError, RankDeficiencyError
from .panel import StockPanel
from .preprocess import UniverseConfig, monthly_universe, winsorize_cross_section, zscore_cross_section

log = logging.getLogger(__name__)

T_STAT_CAP = 999.0

COLUMN_ORDER = ("CGO", "PROXY", "PROXYxCGO", "PROXYxMOM12", "MOM_1_0", "MOM_12_1", "TURNOVER")
DISPLAY_NAMES = {
    "CGO": "CGO",
    "PROXY": "PROXY",
    "PROXYxCGO": "PROXY x CGO",
    "PROXYxMOM12": "PROXY x MOM(-12,-1)",
    "MOM_1_0": "MOM(-1,0)",
    "MOM_12_1": "MOM(-12,-1)",
    "TURNOVER": "TURNOVER",
}
_SPEC_COLUMNS = {
    1: ("CGO", "MOM_1_0", "MOM_12_1", "TURNOVER"),
    2: ("CGO", "PROXY", "MOM_1_0", "MOM_12_1", "TURNOVER"),
    3: ("CGO", "PROXY", "PROXYxCGO", "MOM_1_0", "MOM_12_1", "TURNOVER"),
    4: ("CGO", "PROXY", "PROXYxCGO", "PROXYxMOM12", "MOM_1_0", "MOM_12_1", "TURNOVER"),
}
_INTERACTIONS = {"PROXYxCGO": ("PROXY", "CGO"), "PROXYxMOM12": ("PROXY", "MOM_12_1")}


@dataclass(frozen=True)
class FmSpec:
    """One regression specification: which lagged columns enter."""

    proxy_name: str
    columns: tuple[str, ...]
    include_intercept: bool = True
    nw_lag: int = 4
    winsorize: bool = True

    def __post_init__(self):
        for col in self.columns:
            if col not in COLUMN_ORDER:
                raise ValueError(f"unknown column {col!r}")
            for dep in _INTERACTIONS.get(col, ()):
                if dep not in self.columns:
                    raise ValueError(f"{col} requires {dep} in the specification")

    @classmethod
    def for_spec(cls, proxy_name: str, spec_id: int, *, nw_lag: int = 4, winsorize: bool = True) -> "FmSpec":
        return cls(proxy_name=proxy_name, columns=_SPEC_COLUMNS[spec_id], nw_lag=nw_lag, winsorize=winsorize)


@dataclass(frozen=True)
class FmResult:
    """Time-series averages of the monthly coefficients, NW-adjusted.

    ``coef_mean`` and ``nw_se`` are in percent per month; ``monthly``
    keeps the raw per-month coefficients (fraction units) for audit.
    """

    coef_mean: pd.Series
    nw_se: pd.Series
    t_stats: pd.Series
    months_used: int
    monthly: pd.DataFrame
    n_obs: pd.Series = field(repr=False, default=None)


def nw_auto_lag(n_obs: int) -> int:
    """Automatic truncation rule floor(4 * (T/100)^(2/9))."""
    return int(np.floor(4.0 * (n_obs / 100.0) ** (2.0 / 9.0)))


def newey_west_se(series, lag: int) -> float:
    """Newey-West standard error of the mean of a time-ordered series.

    Var = (1/T) * [gamma_0 + 2 * sum_{l=1..L} (1 - l/(L+1)) * gamma_l]
    with gamma_l the lag-l autocovariance of the demeaned series under
    the 1/T normalization.  The Bartlett weights keep the estimate
    non-negative in expectation; any negative value from rounding is
    clamped to zero (and logged).
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise InsufficientDataError("Newey-West needs at least 2 observations")
    T = x.size
    if not 0 <= lag < T:
        raise ValueError(f"lag must be in [0, {T - 1}]")
    d = x - x.mean()
    var = float(np.dot(d, d)) / T
    for l in range(1, lag + 1):
        gamma = float(np.dot(d[l:], d[:-l])) / T
        var += 2.0 * (1.0 - l / (lag + 1.0)) * gamma
    var /= T
    if var < 0.0:
        log.warning("Newey-West variance %.3e clamped to zero", var)
        var = 0.0
    return float(np.sqrt(var))


def capped_t(mean: float, se: float) -> float:
    """t ratio with a finite sentinel when the standard error vanishes."""
    if np.isnan(se):
        return float("nan")
    if se == 0.0:
        return 0.0 if mean == 0.0 else float(np.sign(mean)) * T_STAT_CAP
    t = mean / se
    return float(np.clip(t, -T_STAT_CAP, T_STAT_CAP))


def hac_ols(y, X, lag: int):
    """OLS with Bartlett-kernel HAC standard errors.

    Returns (coefficients, standard errors) as arrays; ``X`` must
    already contain any intercept column.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    T = y.size
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise RankDeficiencyError([f"col{i}" for i in range(X.shape[1])])
    resid = y - X @ coef
    g = X * resid[:, None]
    S = g.T @ g
    for l in range(1, lag + 1):
        gamma = g[l:].T @ g[:-l]
        S += (1.0 - l / (lag + 1.0)) * (gamma + gamma.T)
    xtx_inv = np.linalg.inv(X.T @ X)
    cov = xtx_inv @ S @ xtx_inv
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return coef, se


def trailing_momentum(monthly_returns: pd.DataFrame) -> pd.DataFrame:
    """Cumulative return from the end of month t-12 to the end of month t-1.

    Compounds the 11 returns of months t-11 .. t-1; missing whenever
    any of them is missing.
    """
    values = monthly_returns.to_numpy(dtype=float)
    out = np.full_like(values, np.nan)
    for i in range(11, values.shape[0]):
        window = values[i - 11:i]
        good = ~np.isnan(window).any(axis=0)
        out[i, good] = np.prod(1.0 + window[:, good], axis=0) - 1.0
    return pd.DataFrame(out, index=monthly_returns.index, columns=monthly_returns.columns)


def monthly_turnover(panel: StockPanel) -> pd.DataFrame:
    """Month volume over shares outstanding at month end.

    Shares are the last weekly observation at or before each month end,
    carried forward across reporting gaps.
    """
    shares = panel.weekly_shares.groupby(panel.weeks.to_period("M")).last()
    shares = shares.reindex(panel.months).ffill()
    with np.errstate(invalid="ignore", divide="ignore"):
        turn = panel.monthly_volume.to_numpy(dtype=float) / np.where(
            shares.to_numpy(dtype=float) > 0, shares.to_numpy(dtype=float), np.nan
        )
    return pd.DataFrame(turn, index=panel.months, columns=panel.stocks)


def build_design(
    panel: StockPanel,
    cgo_monthly: pd.DataFrame,
    proxy_frame: pd.DataFrame | None,
    month,
    spec: FmSpec,
    universe_config: UniverseConfig,
    *,
    turnover: pd.DataFrame | None = None,
    momentum: pd.DataFrame | None = None,
    min_extra_rows: int = 10,
) -> pd.DataFrame:
    """Characteristic rows for one formation month.

    Columns: next_return (month t+1, fraction) plus the spec's
    regressors dated end of month t.  Regressors are winsorized
    cross-sectionally before interactions are formed; interactions are
    not re-winsorized.  Raises :class:`InsufficientDataError` when
    fewer than len(columns) + ``min_extra_rows`` complete rows survive.
    """
    month = pd.Period(month, freq="M")
    nxt = month + 1
    if nxt not in panel.months:
        raise KeyError(f"month {nxt} outside the loaded panel")
    universe = sorted(monthly_universe(panel, month, universe_config))
    if turnover is None:
        turnover = monthly_turnover(panel)
    if momentum is None:
        momentum = trailing_momentum(panel.monthly_return)

    base = pd.DataFrame(index=universe)
    base["next_return"] = panel.monthly_return.loc[nxt].reindex(universe)
    base["CGO"] = cgo_monthly.loc[month].reindex(universe) if month in cgo_monthly.index else np.nan
    if "PROXY" in spec.columns:
        base["PROXY"] = proxy_frame.loc[month].reindex(universe)
    base["MOM_1_0"] = panel.monthly_return.loc[month].reindex(universe)
    base["MOM_12_1"] = momentum.loc[month].reindex(universe)
    base["TURNOVER"] = turnover.loc[month].reindex(universe)

    plain = [c for c in spec.columns if c not in _INTERACTIONS]
    if spec.winsorize:
        for col in plain:
            if base[col].notna().sum() >= 2:
                base[col] = winsorize_cross_section(
                    base[col], universe_config.winsor_lower, universe_config.winsor_upper
                )
    for col in spec.columns:
        if col in _INTERACTIONS:
            a, b = _INTERACTIONS[col]
            base[col] = base[a] * base[b]

    design = base[["next_return", *spec.columns]].dropna()
    if universe_config.normalize_features:
        for col in spec.columns:
            design[col] = zscore_cross_section(design[col])
    required = len(spec.columns) + min_extra_rows
    if len(design) < required:
        raise InsufficientDataError(f"{len(design)} complete rows in {month}; need {required}")
    return design


def cross_section_ols(design: pd.DataFrame, spec: FmSpec) -> tuple[pd.Series, int]:
    """One month's OLS coefficients (including the unreported intercept).

    Solved by SVD least squares; the normal-equation residual of the
    solution is below 1e-8 in relative terms for any full-rank design.
    Rank deficiency is reported with the offending column(s).
    """
    cols = list(spec.columns)
    y = design["next_return"].to_numpy(dtype=float)
    X = design[cols].to_numpy(dtype=float)
    names = cols
    if spec.include_intercept:
        X = np.column_stack([np.ones(len(design)), X])
        names = ["const"] + cols
    if len(design) <= len(names):
        raise InsufficientDataError(f"{len(design)} rows for {len(names)} columns")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        _, _, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
        offending = [names[i] for i in piv[rank:]]
        raise RankDeficiencyError(offending)
    return pd.Series(coef, index=names), len(design)


def fm_estimate(monthly_coefs: pd.DataFrame, *, nw_lag: int = 4, min_months: int = 24,
                n_obs: pd.Series | None = None) -> FmResult:
    """Average the monthly coefficient series and attach NW inference.

    Means and standard errors are reported in percent (x100).  A single
    month is allowed only when ``min_months`` is relaxed; its standard
    error is the NaN sentinel.
    """
    if len(monthly_coefs) < min_months:
        raise InsufficientDataError(f"{len(monthly_coefs)} months of coefficients; need {min_months}")
    means = monthly_coefs.mean(axis=0)
    ses = {}
    for col in monthly_coefs.columns:
        series = monthly_coefs[col].to_numpy(dtype=float)
        if series.size < 2:
            ses[col] = float("nan")
        else:
            lag = min(nw_lag, series.size - 1)
            ses[col] = newey_west_se(series, lag)
    ses = pd.Series(ses)[monthly_coefs.columns]
    t = pd.Series({c: capped_t(means[c], ses[c]) for c in monthly_coefs.columns})[monthly_coefs.columns]
    return FmResult(
        coef_mean=means * 100.0,
        nw_se=ses * 100.0,
        t_stats=t,
        months_used=len(monthly_coefs),
        monthly=monthly_coefs,
        n_obs=n_obs,
    )


def run_fm(
    panel: StockPanel,
    cgo_monthly: pd.DataFrame,
    proxy_frame: pd.DataFrame | None,
    proxy_name: str,
    formation_months,
    universe_config: UniverseConfig,
    *,
    spec_ids=(1, 2, 3, 4),
    nw_lag: int = 4,
    winsorize: bool = True,
    min_months: int = 24,
) -> tuple[dict[int, FmResult], dict[int, list]]:
    """All requested specifications for one proxy over the formation months.

    Months that cannot seat a regression (too few complete rows) are
    skipped and reported in the second return value.
    """
    turnover = monthly_turnover(panel)
    momentum = trailing_momentum(panel.monthly_return)
    results: dict[int, FmResult] = {}
    skipped: dict[int, list] = {}
    for spec_id in spec_ids:
        spec = FmSpec.for_spec(proxy_name, spec_id, nw_lag=nw_lag, winsorize=winsorize)
        rows = {}
        counts = {}
        missed = []
        for month in formation_months:
            try:
                design = build_design(
                    panel, cgo_monthly, proxy_frame, month, spec, universe_config,
                    turnover=turnover, momentum=momentum,
                )
                coefs, n = cross_section_ols(design, spec)
            except InsufficientDataError as exc:
                missed.append(month)
                log.info("spec (%d) proxy %s: skipped %s (%s)", spec_id, proxy_name, month, exc)
                continue
            rows[month] = coefs
            counts[month] = n
        if not rows:
            skipped[spec_id] = missed
            continue
        monthly = pd.DataFrame(rows).T
        monthly.index = pd.PeriodIndex(monthly.index, freq="M")
        results[spec_id] = fm_estimate(
            monthly, nw_lag=nw_lag, min_months=min_months,
            n_obs=pd.Series(counts),
        )
        skipped[spec_id] = missed
    return results, skipped


def run_all_specs(
    panel: StockPanel,
    cgo_monthly: pd.DataFrame,
    proxy_frames: dict[str, pd.DataFrame],
    formation_months,
    universe_config: UniverseConfig,
    *,
    nw_lag: int = 4,
    winsorize: bool = True,
    min_months: int = 24,
) -> tuple[dict[str, dict[int, FmResult]], dict[str, dict[int, list]]]:
    """Specifications (1)-(4) for every requested proxy."""
    tables = {}
    skipped = {}
    for proxy_name, frame in proxy_frames.items():
        tables[proxy_name], skipped[proxy_name] = run_fm(
            panel, cgo_monthly, frame, proxy_name, formation_months, universe_config,
            nw_lag=nw_lag, winsorize=winsorize, min_months=min_months,
        )
    return tables, skipped


def format_fm_table(proxy_name: str, results: dict[int, FmResult], *, nw_lag: int) -> str:
    """Aligned text table: 7 coefficient rows x specifications (1)-(4),
    coefficients in percent with NW t-statistics in parentheses.
    """
    spec_ids = sorted(results)
    width = 22
    lines = [
        f"# Fama-MacBeth regressions, PROXY = {proxy_name}",
        f"# coefficients in percent per month; Newey-West t-statistics (lag {nw_lag}) in parentheses",
        f"# intercept estimated but not reported",
        "",
        "Variable".ljust(width) + "".join(f"({s})".rjust(12) for s in spec_ids),
    ]
    for col in COLUMN_ORDER:
        coef_cells = []
        t_cells = []
        for s in spec_ids:
            res = results[s]
            if col in res.coef_mean.index:
                coef_cells.append(f"{res.coef_mean[col]:.4f}".rjust(12))
                t_cells.append(f"({res.t_stats[col]:.2f})".rjust(12))
            else:
                coef_cells.append(" " * 12)
                t_cells.append(" " * 12)
        lines.append(DISPLAY_NAMES[col].ljust(width) + "".join(coef_cells))
        lines.append(" " * width + "".join(t_cells))
    months = ", ".join(str(results[s].months_used) for s in spec_ids)
    lines.append("")
    lines.append(f"# months used per specification: {months}")
    return "\n".join(lines) + "\n"


def fm_csv_rows(proxy_name: str, results: dict[int, FmResult]):
    """Long-format rows: proxy, spec, variable, coefficient (percent), nw_se, t."""
    rows = [("proxy", "spec", "variable", "coef_pct", "nw_se_pct", "t_stat", "months")]
    for s in sorted(results):
        res = results[s]
        for col in ["const", *COLUMN_ORDER]:
            if col not in res.coef_mean.index:
                continue
            rows.append((
                proxy_name, str(s), col,
                f"{res.coef_mean[col]:.6f}", f"{res.nw_se[col]:.6f}",
                f"{res.t_stats[col]:.4f}", str(res.months_used),
            ))
    return rows
