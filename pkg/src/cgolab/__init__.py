"""Research toolkit for overhang-conditioned risk-return analysis on
CSV stock panels: turnover-weighted reference prices, five risk-proxy
estimators, dependent double-sorted portfolios, and monthly
cross-sectional regressions with Newey-West inference, validated on
synthetic panels with planted effects.
"""

__version__ = "0.1.0"

from .cgo import (
    CgoResult,
    cgo_monthly,
    cgo_percentiles,
    cgo_weekly,
    compute_cgo,
    reference_price,
    weekly_turnover,
)
from .double_sort import (
    DoubleSortTable,
    SpreadStats,
    build_table,
    dependent_sort,
    quintile_assign,
    spread_stats,
    vw_excess_return,
)
from .errors import (
    CgolabError,
    ConfigError,
    DuplicateKeyError,
    EmptyPanelError,
    InsufficientDataError,
    NonMonotonicDateError,
    RankDeficiencyError,
    SchemaError,
    UndefinedReferencePriceError,
    ZeroDispersionError,
)
from .fama_macbeth import (
    FmResult,
    FmSpec,
    build_design,
    cross_section_ols,
    fm_estimate,
    newey_west_se,
    nw_auto_lag,
    run_all_specs,
    run_fm,
    trailing_momentum,
)
from .panel import IngestConfig, StockPanel, align_calendars, load_panel, save_panel
from .pipeline import PipelineConfig, PipelineResult, formation_months, run_pipeline
from .preprocess import (
    UniverseConfig,
    apply_longevity_filter,
    fill_missing,
    monthly_universe,
    winsorize_cross_section,
    zscore_cross_section,
)
from .proxies import (
    PROXY_NAMES,
    ProxyPanel,
    beta,
    cfvol,
    compute_proxies,
    inv_age,
    ivol,
    retvol,
)
from .synth import DgpConfig, GroundTruth, generate_panel, true_cgo_oracle

__all__ = [name for name in dir() if not name.startswith("_")]
