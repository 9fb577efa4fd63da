"""Synthetic stock panels with a fully known data-generating process.

Returns in the sample window are generated as a planted linear
function of the same lagged characteristics the pipeline later
computes (overhang, risk proxy, momentum, turnover) plus scaled noise,
so estimator-recovery tests are exact by construction rather than
approximate structural simulations.  Weekly prices bridge each monthly
return exactly (weekly gross returns compound to the monthly gross),
and all randomness comes from counter-based Philox streams keyed by
(seed, substream), so identical configs reproduce bit-identical panels
on any platform and under any parallelism.

``true_cgo_oracle`` re-implements the reference price by direct
summation with no shared code with the engine; it exists only to
cross-check the engine in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .cgo import (
    DEFAULT_K_FLOOR,
    DEFAULT_LOOKBACK_WEEKS,
    DEFAULT_MIN_VALID_WEEKS,
    ReferencePriceLedger,
)
from .errors import ConfigError
from .panel import StockPanel
from .proxies import ROLLING_MIN_OBS, ROLLING_WINDOW_MONTHS, sd_cross_section

BURN_IN_MONTHS = 63
RISK_FREE_MONTHLY = 0.0025
PRICE_RANGE = (15.0, 60.0)
SHARES_BASE = 1e8
MKT_MEAN, MKT_SD = 0.005, 0.05
SMB_SD = HML_SD = 0.02
RETURN_FLOOR = -0.98
RESAMPLE_CAP = 100
RNG_NAME = "philox4x64"

_FACTOR_STREAM = np.uint64(1) << np.uint64(40)
_RESAMPLE_BASE = (np.uint64(1) << np.uint64(40)) + np.uint64(1000)


@dataclass(frozen=True)
class DgpConfig:
    """Planted data-generating process.

    ``planted_eq3_betas`` follow the regression's column order:
    (CGO, PROXY, PROXY x CGO, PROXY x MOM(-12,-1), MOM(-1,0),
    MOM(-12,-1), TURNOVER).  ``n_months`` counts formation months; the
    generated panel additionally carries a burn-in long enough for
    every five-year estimator plus one trailing holding month.
    ``noise_sd`` scales the entire stochastic part of sample-window
    returns (market loading drawn from ``beta_range`` plus
    idiosyncratic volatility from ``vol_range``); zero makes sample
    returns an exact function of the planted surface.
    """

    n_stocks: int
    n_months: int
    seed: int
    beta_range: tuple[float, float] = (0.5, 1.5)
    vol_range: tuple[float, float] = (0.03, 0.10)
    turnover_process: tuple[float, float] = (0.05, 0.5)
    planted_eq3_betas: tuple[float, ...] = (0.0,) * 7
    noise_sd: float = 1.0
    listing_stagger: int = 0
    start_month: str = "2000-01"
    surface_proxy: str = "retvol"
    with_daily: bool = True

    def __post_init__(self):
        if self.n_stocks < 1 or self.n_months < 1:
            raise ConfigError("n_stocks and n_months must be positive")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be non-negative")
        for lo, hi in (self.beta_range, self.vol_range):
            if not lo <= hi:
                raise ConfigError("ranges must be non-empty")
        mean, rho = self.turnover_process
        if not (0.0 < mean < 1.0 and 0.0 < rho < 1.0):
            raise ConfigError("turnover mean and persistence must lie in (0, 1)")
        if len(self.planted_eq3_betas) != 7:
            raise ConfigError("planted_eq3_betas must have 7 entries")
        if self.surface_proxy != "retvol":
            raise ConfigError("only the retvol surface proxy is implemented")
        if self.listing_stagger < 0:
            raise ConfigError("listing_stagger must be non-negative")


@dataclass(frozen=True)
class GroundTruth:
    """Planted parameters plus the realized regression surface.

    ``surface`` holds, for each formation month and stock with complete
    characteristics, the noise-free expected next-month return implied
    by the planted coefficients (including the risk-free base).
    """

    config: DgpConfig
    stock_betas: pd.Series
    stock_vols: pd.Series
    surface: pd.DataFrame
    formation_months: pd.PeriodIndex
    params: dict = field(repr=False, default_factory=dict)


def _gen(seed: int, stream) -> np.random.Generator:
    key = np.zeros(2, dtype=np.uint64)
    key[0] = np.uint64(seed)
    key[1] = np.uint64(stream)
    return np.random.Generator(np.random.Philox(key=key))


def generate_panel(config: DgpConfig) -> tuple[StockPanel, GroundTruth]:
    """Generate a panel plus its ground-truth record.

    Raises :class:`ConfigError` if the planted surface keeps implying
    returns at or below -98% after the resampling cap (negative prices).
    """
    n = config.n_stocks
    start = pd.Period(config.start_month, freq="M")
    first_month = start - BURN_IN_MONTHS
    last_month = start + config.n_months
    months = pd.period_range(first_month, last_month, freq="M")
    n_months_total = len(months)
    formation = pd.period_range(start, start + config.n_months - 1, freq="M")

    start_ts = first_month.to_timestamp()
    monday = start_ts + pd.Timedelta(days=(7 - start_ts.weekday()) % 7)
    days_all = pd.bdate_range(monday, last_month.to_timestamp(how="end"))
    n_weeks = len(days_all) // 5
    days = days_all[: n_weeks * 5]
    week_end = days[4::5]
    week_month = week_end.to_period("M")
    month_pos = {m: i for i, m in enumerate(months)}
    weeks_in_month: list[np.ndarray] = [np.array([], dtype=int)] * n_months_total
    for m, grp in pd.Series(np.arange(n_weeks), index=week_month).groupby(level=0):
        weeks_in_month[month_pos[m]] = grp.to_numpy()

    stocks = [f"S{i:05d}" for i in range(n)]
    stagger = np.floor(np.linspace(0.0, config.listing_stagger, n)).astype(int) if n > 1 else np.zeros(1, int)
    years = sorted({m.year for m in months})
    n_years = len(years)

    # per-stock substreams: parameter scalars first, then the noise arrays
    beta_i = np.empty(n)
    vol_i = np.empty(n)
    p0 = np.empty(n)
    shares_i = np.empty(n)
    cf_base = np.empty(n)
    cf_sd = np.empty(n)
    turn_eps = np.empty((n_weeks, n))
    eps_m = np.empty((n_months_total, n))
    bridge_w = np.empty((n_weeks, n))
    bridge_d = np.empty((n_weeks * 5, n)) if config.with_daily else None
    cf_z = np.empty((n_years, n))
    for i in range(n):
        g = _gen(config.seed, i)
        beta_i[i] = g.uniform(*config.beta_range)
        vol_i[i] = g.uniform(*config.vol_range)
        p0[i] = g.uniform(*PRICE_RANGE)
        shares_i[i] = SHARES_BASE * g.uniform(0.5, 2.0)
        cf_base[i] = g.uniform(0.02, 0.10)
        cf_sd[i] = g.uniform(0.005, 0.05)
        turn_eps[:, i] = g.standard_normal(n_weeks)
        eps_m[:, i] = g.standard_normal(n_months_total)
        bridge_w[:, i] = g.standard_normal(n_weeks)
        if config.with_daily:
            bridge_d[:, i] = g.standard_normal(n_weeks * 5)
        cf_z[:, i] = g.standard_normal(n_years)

    gf = _gen(config.seed, _FACTOR_STREAM)
    mkt = MKT_MEAN + MKT_SD * gf.standard_normal(n_months_total)
    smb = SMB_SD * gf.standard_normal(n_months_total)
    hml = HML_SD * gf.standard_normal(n_months_total)
    rf = np.full(n_months_total, RISK_FREE_MONTHLY)

    # weekly turnover: AR(1) toward the configured mean, clipped into (0, 1)
    t_mean, t_rho = config.turnover_process
    t_sd = t_mean / 3.0
    turnover = np.empty((n_weeks, n))
    level = np.full(n, t_mean)
    for w in range(n_weeks):
        level = t_mean + t_rho * (level - t_mean) + t_sd * turn_eps[w]
        np.clip(level, 1e-4, 0.999, out=level)
        turnover[w] = level

    listing_month = stagger  # month index into `months`
    close_w = np.full((n_weeks, n), np.nan)
    volume_w = np.full((n_weeks, n), np.nan)
    ret_m = np.full((n_months_total, n), np.nan)
    close_m = np.full((n_months_total, n), np.nan)
    volume_m = np.full((n_months_total, n), np.nan)
    daily_ret = np.full((n_weeks * 5, n), np.nan) if config.with_daily else None

    betas = np.asarray(config.planted_eq3_betas, dtype=float)
    sigma_w = vol_i / 3.0
    sigma_d = vol_i / 7.0
    surface = np.full((config.n_months, n), np.nan)
    x_prev = None  # characteristics of the previous month, (7, n) with NaN for incomplete
    prev_close = np.full(n, np.nan)
    T = DEFAULT_LOOKBACK_WEEKS
    ledger = ReferencePriceLedger(n, n_weeks)

    form_start = BURN_IN_MONTHS
    form_end = BURN_IN_MONTHS + config.n_months - 1

    for m in range(n_months_total):
        active = listing_month <= m
        newly = listing_month == m
        prev_close[newly] = p0[newly]

        # target monthly return
        planted = form_start + 1 <= m <= form_end + 1
        if planted and x_prev is not None:
            complete = ~np.isnan(x_prev).any(axis=0)
            surf = np.zeros(n)
            surf[complete] = betas @ x_prev[:, complete]
        else:
            complete = np.zeros(n, dtype=bool)
            surf = np.zeros(n)
        scale = config.noise_sd if planted else 1.0
        r = rf[m] + surf + scale * (beta_i * mkt[m] + vol_i * eps_m[m])
        bad = active & (r <= RETURN_FLOOR)
        if bad.any():
            gr = _gen(config.seed, _RESAMPLE_BASE + np.uint64(m))
            for _ in range(RESAMPLE_CAP):
                if not bad.any():
                    break
                redraw = gr.standard_normal(n)
                r = np.where(
                    bad,
                    rf[m] + surf + scale * (beta_i * mkt[m] + vol_i * redraw),
                    r,
                )
                bad = active & (r <= RETURN_FLOOR)
            if bad.any():
                raise ConfigError(
                    f"planted surface implies non-positive prices in {months[m]} "
                    f"after {RESAMPLE_CAP} resampling rounds"
                )
        if planted and x_prev is not None:
            surface[m - form_start - 1, complete] = rf[m] + surf[complete]

        ws = weeks_in_month[m]
        if ws.size:
            k = ws.size
            z = bridge_w[ws] * sigma_w
            log_weekly = np.log1p(r) / k + (z - z.mean(axis=0))
            gross = np.exp(log_weekly)
            path = prev_close * np.cumprod(gross, axis=0)
            path[:, ~active] = np.nan
            close_w[ws] = path
            vol_block = turnover[ws] * shares_i
            vol_block[:, ~active] = np.nan
            volume_w[ws] = vol_block
            for j in range(k):
                with np.errstate(invalid="ignore", divide="ignore"):
                    turn_row = vol_block[j] / np.where(shares_i > 0, shares_i, np.nan)
                turn_row = np.clip(turn_row, 0.0, 1.0)
                valid_row = ~np.isnan(path[j]) & ~np.isnan(turn_row)
                ledger.push(
                    np.where(valid_row, turn_row, 0.0),
                    np.where(valid_row, path[j], 0.0),
                    valid_row,
                )
            if config.with_daily:
                for j, w in enumerate(ws):
                    dd = slice(5 * w, 5 * w + 5)
                    zd = bridge_d[dd] * sigma_d
                    log_daily = log_weekly[j] / 5.0 + (zd - zd.mean(axis=0))
                    block = np.expm1(log_daily)
                    block[:, ~active] = np.nan
                    daily_ret[dd] = block
            new_close = path[-1]
        else:
            new_close = prev_close.copy()
            new_close[~active] = np.nan

        close_m[m, active] = new_close[active]
        volume_m[m, active] = np.nansum(volume_w[ws][:, active], axis=0) if ws.size else 0.0
        if m > 0:
            have_prev = active & ~newly & ~np.isnan(close_m[m - 1])
            ret_m[m, have_prev] = close_m[m, have_prev] / close_m[m - 1, have_prev] - 1.0
        prev_close = new_close

        # characteristics dated end of month m, consumed by month m+1's draw
        if form_start <= m <= form_end and ws.size:
            i_t = int(ws[-1])
            x_prev = _characteristics(
                ledger, i_t, close_w[i_t - 1], ret_m, volume_m, shares_i, m, T,
            )
        else:
            x_prev = None

    # fundamentals: one cash-flow report per calendar December
    cash_m = np.full((n_months_total, n), np.nan)
    year_pos = {y: i for i, y in enumerate(years)}
    for m in range(n_months_total):
        if months[m].month != 12:
            continue
        active = listing_month <= m
        cap = close_m[m] * shares_i
        vals = cap * (cf_base + cf_sd * cf_z[year_pos[months[m].year]])
        cash_m[m, active] = vals[active]

    active_mask = np.zeros((n_months_total, n), dtype=bool)
    for i in range(n):
        active_mask[listing_month[i]:, i] = True

    cap_m = close_m * shares_i
    ones = np.where(active_mask, 1.0, np.nan)

    index_m = months
    frame = lambda a, idx: pd.DataFrame(a, index=idx, columns=stocks)
    shares_w = np.where(~np.isnan(close_w), shares_i, np.nan)

    factors = pd.DataFrame(
        {"mkt_excess": mkt, "smb": smb, "hml": hml, "risk_free": rf}, index=index_m
    )
    factors.index.name = "month"

    daily_factors = None
    daily_frame = pd.DataFrame(index=pd.DatetimeIndex([], name="date"), columns=stocks, dtype=float)
    if config.with_daily:
        daily_frame = frame(daily_ret, days)
        daily_frame.index.name = "date"
        df_vals = {}
        day_month = days.to_period("M")
        counts = pd.Series(1, index=days).groupby(day_month).transform("sum").to_numpy()
        zf = {name: gf.standard_normal(len(days)) for name in ("mkt_excess", "smb", "hml")}
        for name, series, sd in (("mkt_excess", mkt, 0.01), ("smb", smb, 0.005), ("hml", hml, 0.005)):
            monthly = pd.Series(series, index=index_m).reindex(day_month).to_numpy()
            z = zf[name] * sd
            zbar = pd.Series(z, index=days).groupby(day_month).transform("mean").to_numpy()
            df_vals[name] = monthly / counts + z - zbar
        df_vals["risk_free"] = pd.Series(rf, index=index_m).reindex(day_month).to_numpy() / counts
        daily_factors = pd.DataFrame(df_vals, index=days)
        daily_factors.index.name = "date"

    meta = pd.DataFrame(
        {"listing_date": [months[listing_month[i]].to_timestamp() for i in range(n)]},
        index=pd.Index(stocks, name="stock_id"),
    )

    panel = StockPanel(
        weekly_close=frame(close_w, week_end),
        weekly_volume=frame(volume_w, week_end),
        weekly_shares=frame(shares_w, week_end),
        daily_return=daily_frame,
        monthly_return=frame(ret_m, index_m),
        monthly_close=frame(close_m, index_m),
        monthly_cap=frame(cap_m, index_m),
        monthly_volume=frame(volume_m, index_m),
        monthly_blacklisted=frame(np.where(active_mask, 0.0, np.nan), index_m),
        monthly_tradable=frame(ones, index_m),
        monthly_cashflow=frame(cash_m, index_m),
        meta=meta,
        factors=factors,
        daily_factors=daily_factors,
    )
    for f in (panel.weekly_close, panel.weekly_volume, panel.weekly_shares):
        f.index.name = "week_end"

    params = {
        "rng": RNG_NAME,
        "seed": config.seed,
        "n_stocks": config.n_stocks,
        "n_months": config.n_months,
        "burn_in_months": BURN_IN_MONTHS,
        "start_month": config.start_month,
        "noise_sd": config.noise_sd,
        "turnover_mean": t_mean,
        "turnover_persistence": t_rho,
        "beta_low": config.beta_range[0],
        "beta_high": config.beta_range[1],
        "vol_low": config.vol_range[0],
        "vol_high": config.vol_range[1],
        "listing_stagger": config.listing_stagger,
        "surface_proxy": config.surface_proxy,
        "risk_free_monthly": RISK_FREE_MONTHLY,
    }
    for j, b in enumerate(config.planted_eq3_betas, start=1):
        params[f"beta{j}"] = b

    truth = GroundTruth(
        config=config,
        stock_betas=pd.Series(beta_i, index=stocks),
        stock_vols=pd.Series(vol_i, index=stocks),
        surface=pd.DataFrame(surface, index=formation, columns=stocks),
        formation_months=formation,
        params=params,
    )
    return panel, truth


def _characteristics(ledger, i_t, prev_close_row, ret_m, volume_m, shares_i, m, T):
    """The seven regressors at the end of month m, matching the pipeline's
    definitions operation for operation (same formulas, same floats).
    """
    n = ret_m.shape[1]
    out = np.full((7, n), np.nan)

    # overhang at the last week of the month, identical to the engine ledger
    if i_t >= T:
        num, k, n_valid = ledger.window(i_t, T)
        ok = (n_valid >= DEFAULT_MIN_VALID_WEEKS) & (k >= DEFAULT_K_FLOOR)
        rp = np.full(n, np.nan)
        rp[ok] = num[ok] / k[ok]
        with np.errstate(invalid="ignore"):
            out[0] = np.where(
                ~np.isnan(rp) & (prev_close_row > 0),
                (prev_close_row - rp) / prev_close_row,
                np.nan,
            )

    # trailing five-year return volatility
    lo = max(0, m - ROLLING_WINDOW_MONTHS + 1)
    out[1] = sd_cross_section(ret_m[lo:m + 1], ROLLING_MIN_OBS)

    # momentum over months m-11 .. m-1, all eleven returns required
    if m >= 11:
        window = ret_m[m - 11:m]
        good = ~np.isnan(window).any(axis=0)
        mom12 = np.full(n, np.nan)
        mom12[good] = np.prod(1.0 + window[:, good], axis=0) - 1.0
    else:
        mom12 = np.full(n, np.nan)

    out[2] = out[1] * out[0]
    out[3] = out[1] * mom12
    out[4] = ret_m[m]
    out[5] = mom12
    with np.errstate(invalid="ignore", divide="ignore"):
        out[6] = volume_m[m] / np.where(shares_i > 0, shares_i, np.nan)
    return out


def true_cgo_oracle(
    panel: StockPanel,
    stock: str,
    week,
    *,
    lookback_weeks: int = DEFAULT_LOOKBACK_WEEKS,
    min_valid_weeks: int = DEFAULT_MIN_VALID_WEEKS,
    k_floor: float = DEFAULT_K_FLOOR,
) -> float:
    """Brute-force overhang for one (stock, week): literal expansion of the
    weight recursion, sharing no code with the engine.  Test use only.
    """
    weeks = panel.weeks
    i = int(weeks.get_loc(pd.Timestamp(week)))
    if i < lookback_weeks:
        return float("nan")
    price = panel.weekly_close[stock].to_numpy(dtype=float)
    volume = panel.weekly_volume[stock].to_numpy(dtype=float)
    shares = panel.weekly_shares[stock].to_numpy(dtype=float)

    turn = np.full(price.shape, np.nan)
    for s in range(i):
        if not np.isnan(shares[s]) and shares[s] > 0 and not np.isnan(volume[s]):
            t = volume[s] / shares[s]
            turn[s] = min(max(t, 0.0), 1.0)

    num = 0.0
    mass = 0.0
    n_valid = 0
    for lag in range(1, lookback_weeks + 1):
        s = i - lag
        valid = not np.isnan(price[s]) and not np.isnan(turn[s])
        if valid:
            n_valid += 1
        w = turn[s] if valid else 0.0
        if w != 0.0:
            for tau in range(1, lag):
                u = i - lag + tau
                v_u = turn[u] if (not np.isnan(price[u]) and not np.isnan(turn[u])) else 0.0
                w *= 1.0 - v_u
        if valid:
            num += w * price[s]
        mass += w
    if n_valid < min_valid_weeks or mass < k_floor:
        return float("nan")
    rp = num / mass
    prev = price[i - 1]
    if np.isnan(prev) or prev <= 0:
        return float("nan")
    return (prev - rp) / prev


def write_ground_truth_csv(truth: GroundTruth, path):
    """parameter name, value rows for every planted scalar."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("parameter,value\n")
        for name, value in truth.params.items():
            fh.write(f"{name},{value}\n")
    return path
