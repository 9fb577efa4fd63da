"""End-to-end orchestration: signals, portfolio tables and regressions
for every requested proxy over a configured sample window.

Per-proxy work can fan out over a thread pool (capped by the
CGOLAB_THREADS environment variable); results are keyed and reduced in
a fixed order, so the outputs are identical under any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .cgo import CgoResult, cgo_percentiles, compute_cgo
from .double_sort import DoubleSortTable, build_table
from .errors import ConfigError, InsufficientDataError
from .fama_macbeth import FmResult, nw_auto_lag, run_fm
from .panel import StockPanel
from .preprocess import UniverseConfig
from .proxies import PROXY_NAMES, ProxyPanel, compute_proxies

PERCENTILE_PROBS = (0.10, 0.50, 0.90)
PERCENTILE_MIN_OBS = 10


@dataclass(frozen=True)
class PipelineConfig:
    """Run-wide settings; universe thresholds nest in ``universe``."""

    data_dir: str = "."
    output_dir: str = "out"
    sample_start: str = "1995-01"
    sample_end: str = "2024-08"
    universe: UniverseConfig = field(default_factory=UniverseConfig)
    nw_lag: int | str = 4
    proxies: tuple[str, ...] = PROXY_NAMES
    emit_formats: tuple[str, ...] = ("text", "csv")
    full_grid: bool = False
    dump_monthly: bool = False

    def __post_init__(self):
        start = pd.Period(self.sample_start, freq="M")
        end = pd.Period(self.sample_end, freq="M")
        if not start < end:
            raise ConfigError("sample_start must precede sample_end")
        for p in self.proxies:
            if p not in PROXY_NAMES:
                raise ConfigError(f"unknown proxy {p!r}; expected subset of {PROXY_NAMES}")
        if self.nw_lag != "auto" and (not isinstance(self.nw_lag, int) or self.nw_lag < 0):
            raise ConfigError("nw_lag must be a non-negative integer or 'auto'")


@dataclass(frozen=True)
class PipelineResult:
    cgo: CgoResult
    proxies: ProxyPanel
    percentiles: pd.DataFrame
    tables: dict[str, DoubleSortTable]
    fm: dict[str, dict[int, FmResult]]
    fm_skipped: dict[str, dict[int, list]]
    formation_months: list
    nw_lag: int
    warnings: list[str]


def worker_count() -> int:
    """Worker cap from CGOLAB_THREADS; defaults to single-threaded."""
    raw = os.environ.get("CGOLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def formation_months(panel: StockPanel, sample_start, sample_end) -> list:
    """Months t inside the window whose holding month t+1 is also loaded."""
    start = pd.Period(sample_start, freq="M")
    end = pd.Period(sample_end, freq="M")
    months = [
        m for m in panel.months
        if start <= m < end and (m + 1) in panel.months
    ]
    return months


def percentile_frame(monthly_cgo: pd.DataFrame, months) -> pd.DataFrame:
    """Cross-sectional overhang percentiles per month (Figure-1 data).

    Months with fewer than ``PERCENTILE_MIN_OBS`` defined values are
    omitted rather than emitted with unstable quantiles.
    """
    rows = []
    for month in months:
        if month not in monthly_cgo.index:
            continue
        try:
            p10, p50, p90 = cgo_percentiles(monthly_cgo, month, PERCENTILE_PROBS, min_obs=PERCENTILE_MIN_OBS)
        except InsufficientDataError:
            continue
        rows.append((month, p10, p50, p90))
    return pd.DataFrame(rows, columns=["month", "p10", "p50", "p90"])


def run_pipeline(panel: StockPanel, config: PipelineConfig) -> PipelineResult:
    """Compute signals once, then per-proxy tables and regressions.

    The panel must already be preprocessed (filled, longevity-filtered);
    factor coverage over the sample window is validated here.
    """
    months = formation_months(panel, config.sample_start, config.sample_end)
    if not months:
        raise InsufficientDataError("no formation month has a loaded holding month")
    needed = pd.period_range(months[0], months[-1] + 1, freq="M")
    missing = [str(m) for m in needed if m not in panel.factors.index or panel.factors.loc[m].isna().any()]
    if missing:
        raise ConfigError(f"factor series incomplete inside the sample window: {', '.join(missing[:5])}")

    nw_lag = nw_auto_lag(len(months)) if config.nw_lag == "auto" else int(config.nw_lag)
    warnings: list[str] = []

    cgo_res = compute_cgo(panel)
    proxies = compute_proxies(panel, config.proxies)
    if proxies.metadata.get("ivol_factor_source") == "monthly-flat":
        warnings.append(
            "ivol used monthly factors flat-distributed to days (no daily_factors.csv); "
            "factor regressors are constant within each month"
        )

    pct = percentile_frame(cgo_res.monthly, [m for m in panel.months
                                             if months[0] <= m <= months[-1] + 1])

    def one_proxy(name: str):
        table = build_table(
            panel, cgo_res.monthly, proxies[name], name, months, config.universe,
            nw_lag=nw_lag,
        )
        fm_results, fm_skipped = run_fm(
            panel, cgo_res.monthly, proxies[name], name, months, config.universe,
            nw_lag=nw_lag,
        )
        return table, fm_results, fm_skipped

    names = list(config.proxies)
    workers = min(worker_count(), len(names)) if names else 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = dict(zip(names, pool.map(one_proxy, names)))
    else:
        outputs = {name: one_proxy(name) for name in names}

    tables = {name: outputs[name][0] for name in names}
    fm = {name: outputs[name][1] for name in names}
    fm_skipped = {name: outputs[name][2] for name in names}

    return PipelineResult(
        cgo=cgo_res,
        proxies=proxies,
        percentiles=pct,
        tables=tables,
        fm=fm,
        fm_skipped=fm_skipped,
        formation_months=months,
        nw_lag=nw_lag,
        warnings=warnings,
    )
