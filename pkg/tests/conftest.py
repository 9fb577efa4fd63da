import numpy as np
import pandas as pd
import pytest

from cgolab.panel import StockPanel


def month_index(start: str, n: int) -> pd.PeriodIndex:
    return pd.period_range(start, periods=n, freq="M")


def week_index(start: str, n: int) -> pd.DatetimeIndex:
    # Fridays, weekly
    start = pd.Timestamp(start)
    start = start + pd.Timedelta(days=(4 - start.weekday()) % 7)
    return pd.DatetimeIndex([start + pd.Timedelta(weeks=k) for k in range(n)])


def make_panel(
    stocks,
    *,
    n_months=24,
    n_weeks=None,
    month_start="2000-01",
    monthly_return=None,
    monthly_close=None,
    market_cap=None,
    monthly_volume=None,
    blacklisted=None,
    tradable=None,
    cash_flow=None,
    weekly_close=None,
    weekly_volume=None,
    weekly_shares=None,
    daily_return=None,
    listing=None,
    factors=None,
) -> StockPanel:
    """Hand-rolled panel for unit tests; every field defaults to something
    well-formed so tests only spell out what they exercise."""
    months = month_index(month_start, n_months)
    n_weeks = n_weeks if n_weeks is not None else n_months * 4
    weeks = week_index(months[0].to_timestamp(), n_weeks)
    n = len(stocks)

    def mframe(values, fill):
        if values is None:
            values = np.full((n_months, n), fill, dtype=float)
        return pd.DataFrame(np.asarray(values, dtype=float), index=months, columns=stocks)

    def wframe(values, fill):
        if values is None:
            values = np.full((n_weeks, n), fill, dtype=float)
        return pd.DataFrame(np.asarray(values, dtype=float), index=weeks, columns=stocks)

    if factors is None:
        factors = pd.DataFrame(
            {"mkt_excess": 0.01, "smb": 0.0, "hml": 0.0, "risk_free": 0.002},
            index=months,
        )
    if daily_return is None:
        daily = pd.DataFrame(index=pd.DatetimeIndex([], name="date"), columns=stocks, dtype=float)
    else:
        daily = daily_return
    meta = pd.DataFrame(
        {"listing_date": listing if listing is not None else [months[0].to_timestamp()] * n},
        index=pd.Index(stocks, name="stock_id"),
    )
    return StockPanel(
        weekly_close=wframe(weekly_close, 10.0),
        weekly_volume=wframe(weekly_volume, 5e6),
        weekly_shares=wframe(weekly_shares, 1e8),
        daily_return=daily,
        monthly_return=mframe(monthly_return, 0.01),
        monthly_close=mframe(monthly_close, 10.0),
        monthly_cap=mframe(market_cap, 1e9),
        monthly_volume=mframe(monthly_volume, 2e7),
        monthly_blacklisted=mframe(blacklisted, 0.0),
        monthly_tradable=mframe(tradable, 1.0),
        monthly_cashflow=mframe(cash_flow, np.nan),
        meta=meta,
        factors=factors,
    )


def write_csvs(tmp_path, weekly=None, daily=None, monthly=None, meta=None, factors=None):
    """Write the five input files from literal row lists (header included)."""
    defaults = {
        "weekly.csv": weekly or ["stock_id,week_end,close,volume,shares_outstanding"],
        "daily.csv": daily or ["stock_id,date,return"],
        "monthly.csv": monthly or ["stock_id,month,return,close,market_cap,volume,blacklisted,tradable,cash_flow"],
        "meta.csv": meta or ["stock_id,listing_date"],
        "factors.csv": factors or ["month,mkt_excess,smb,hml,risk_free"],
    }
    for name, lines in defaults.items():
        (tmp_path / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return tmp_path


@pytest.fixture
def two_stock_files(tmp_path):
    """Three well-formed CSVs: 2 stocks x 52 weeks (plus monthly/meta/factors)."""
    weekly = ["stock_id,week_end,close,volume,shares_outstanding"]
    week0 = pd.Timestamp("1999-01-08")
    for stock, base in (("AAA", 10.0), ("BBB", 20.0)):
        for k in range(52):
            d = (week0 + pd.Timedelta(weeks=k)).strftime("%Y-%m-%d")
            weekly.append(f"{stock},{d},{base + 0.01 * k},5000000,100000000")
    monthly = ["stock_id,month,return,close,market_cap,volume,blacklisted,tradable,cash_flow"]
    for stock, base in (("AAA", 10.0), ("BBB", 20.0)):
        for k in range(12):
            m = pd.Period("1999-01") + k
            monthly.append(f"{stock},{m},0.01,{base},1000000000,20000000,0,1,")
    daily = ["stock_id,date,return", "AAA,1999-01-04,0.001", "BBB,1999-01-04,-0.002"]
    meta = ["stock_id,listing_date", "AAA,1995-01-01", "BBB,1996-06-01"]
    factors = ["month,mkt_excess,smb,hml,risk_free"]
    for k in range(12):
        factors.append(f"{pd.Period('1999-01') + k},0.01,0.0,0.0,0.002")
    return write_csvs(tmp_path, weekly=weekly, daily=daily, monthly=monthly, meta=meta, factors=factors)
