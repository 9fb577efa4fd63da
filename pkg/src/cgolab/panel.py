"""Canonical in-memory stock panel and its CSV ingest/export.

The panel keeps one wide frame per field (rows = dates or months,
columns = stock ids) so that cross-sectional and rolling operations
are plain numpy/pandas slices.  Missing observations are explicit
NaNs; empty CSV cells denote missing.  After construction the panel
is treated as read-only everywhere downstream.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    DuplicateKeyError,
    EmptyPanelError,
    NonMonotonicDateError,
    SchemaError,
)

WEEKLY_COLUMNS = ["stock_id", "week_end", "close", "volume", "shares_outstanding"]
DAILY_COLUMNS = ["stock_id", "date", "return"]
MONTHLY_COLUMNS = [
    "stock_id", "month", "return", "close", "market_cap", "volume",
    "blacklisted", "tradable", "cash_flow",
]
META_COLUMNS = ["stock_id", "listing_date"]
FACTOR_COLUMNS = ["month", "mkt_excess", "smb", "hml", "risk_free"]
DAILY_FACTOR_COLUMNS = ["date", "mkt_excess", "smb", "hml", "risk_free"]

_MONTH_RE = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")


@dataclass(frozen=True)
class IngestConfig:
    """Optional coarse trim applied at load time.

    ``sample_start``/``sample_end`` are 'YYYY-MM' strings; rows dated
    outside the window are dropped from every file.  ``None`` keeps
    everything (the pipeline needs pre-sample history for the rolling
    estimators, so trimming is rarely wanted).
    """

    sample_start: str | None = None
    sample_end: str | None = None


@dataclass(frozen=True)
class StockPanel:
    """Aligned per-stock series plus static metadata.

    Weekly frames are indexed by week-ending date, monthly frames by
    ``pd.Period('M')``, daily frames by calendar date; columns are
    stock ids everywhere.  ``factors`` is market-wide (month index).
    """

    weekly_close: pd.DataFrame
    weekly_volume: pd.DataFrame
    weekly_shares: pd.DataFrame
    daily_return: pd.DataFrame
    monthly_return: pd.DataFrame
    monthly_close: pd.DataFrame
    monthly_cap: pd.DataFrame
    monthly_volume: pd.DataFrame
    monthly_blacklisted: pd.DataFrame
    monthly_tradable: pd.DataFrame
    monthly_cashflow: pd.DataFrame
    meta: pd.DataFrame
    factors: pd.DataFrame
    daily_factors: pd.DataFrame | None = field(default=None)

    @property
    def stocks(self) -> list[str]:
        return list(self.monthly_return.columns)

    @property
    def months(self) -> pd.PeriodIndex:
        return self.monthly_return.index

    @property
    def weeks(self) -> pd.DatetimeIndex:
        return self.weekly_close.index

    def monthly_frames(self) -> dict[str, pd.DataFrame]:
        return {
            "return": self.monthly_return,
            "close": self.monthly_close,
            "market_cap": self.monthly_cap,
            "volume": self.monthly_volume,
            "blacklisted": self.monthly_blacklisted,
            "tradable": self.monthly_tradable,
            "cash_flow": self.monthly_cashflow,
        }


def _read_raw(path, expected_columns):
    path = Path(path)
    if not path.exists():
        raise SchemaError("file not found", file=str(path))
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if list(raw.columns) != expected_columns:
        raise SchemaError(
            f"header must be {','.join(expected_columns)}; got {','.join(map(str, raw.columns))}",
            file=str(path), line=1,
        )
    return raw


def _parse_float(raw, column, path):
    # float() is correctly rounded, so full-precision repr round-trips exactly
    s = raw[column].str.strip().to_numpy()
    out = np.empty(len(s), dtype=float)
    for i, cell in enumerate(s):
        if cell == "":
            out[i] = np.nan
            continue
        try:
            out[i] = float(cell)
        except ValueError:
            raise SchemaError(
                f"cannot parse {cell!r} as a number",
                file=str(path), line=i + 2, column=column,
            ) from None
    return pd.Series(out, index=raw.index)


def _parse_date(raw, column, path, required=True):
    s = raw[column].str.strip()
    out = pd.to_datetime(s.where(s != "", None), format="%Y-%m-%d", errors="coerce")
    bad = out.isna() & (s != "") if not required else out.isna()
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise SchemaError(
            f"cannot parse {s.iloc[i]!r} as an ISO-8601 date",
            file=str(path), line=i + 2, column=column,
        )
    return out


def _parse_month(raw, column, path):
    s = raw[column].str.strip()
    bad = ~s.map(lambda v: bool(_MONTH_RE.match(v)))
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise SchemaError(
            f"cannot parse {s.iloc[i]!r} as a YYYY-MM month",
            file=str(path), line=i + 2, column=column,
        )
    return pd.PeriodIndex(s, freq="M")


def _parse_flag(raw, column, path):
    s = raw[column].str.strip()
    ok = s.isin(["", "0", "1"])
    if not ok.all():
        i = int(np.flatnonzero(~ok.to_numpy())[0])
        raise SchemaError(
            f"flag must be 0, 1, or empty; got {s.iloc[i]!r}",
            file=str(path), line=i + 2, column=column,
        )
    out = np.full(len(s), np.nan)
    vals = s.to_numpy()
    out[vals == "0"] = 0.0
    out[vals == "1"] = 1.0
    return pd.Series(out, index=raw.index)


def _parse_stock_id(raw, path):
    s = raw["stock_id"].str.strip()
    if (s == "").any():
        i = int(np.flatnonzero((s == "").to_numpy())[0])
        raise SchemaError("empty stock_id", file=str(path), line=i + 2, column="stock_id")
    return s


def _check_keys(stock_ids, dates, path, date_column):
    """Reject duplicate (stock, date) keys and per-stock date disorder."""
    keys = pd.MultiIndex.from_arrays([stock_ids, dates])
    dup = keys.duplicated()
    if dup.any():
        i = int(np.flatnonzero(dup)[0])
        raise DuplicateKeyError(
            f"duplicate key ({stock_ids.iloc[i]}, {dates[i]})",
            file=str(path), line=i + 2, column=date_column,
        )
    # dates must be strictly increasing within a stock, in file order
    ords = pd.Index(dates).asi8
    for _, pos in pd.Series(np.arange(len(stock_ids))).groupby(stock_ids.to_numpy(), sort=False):
        p = pos.to_numpy()
        seq = ords[p]
        drops = np.flatnonzero(np.diff(seq) <= 0)
        if drops.size:
            i = int(p[drops[0] + 1])
            raise NonMonotonicDateError(
                f"dates not strictly increasing for stock {stock_ids.iloc[i]}",
                file=str(path), line=i + 2, column=date_column,
            )


def _check_positive(values, stock_ids, path, column, allow_zero=False):
    v = values.to_numpy()
    bad = (v < 0) if allow_zero else (v <= 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        kind = "non-negative" if allow_zero else "positive"
        raise SchemaError(
            f"{column} must be {kind}; got {v[i]} for stock {stock_ids.iloc[i]}",
            file=str(path), line=i + 2, column=column,
        )


def _pivot(stock_ids, dates, values, index):
    frame = pd.DataFrame({"stock": stock_ids.to_numpy(), "date": dates, "value": values.to_numpy()})
    wide = frame.pivot(index="date", columns="stock", values="value")
    wide = wide.sort_index()
    wide.columns.name = None
    wide.index.name = index
    return wide.reindex(sorted(wide.columns), axis=1)


def default_paths(data_dir) -> dict[str, Path]:
    """Map the documented file roles onto ``data_dir`` entries."""
    d = Path(data_dir)
    paths = {
        "weekly": d / "weekly.csv",
        "daily": d / "daily.csv",
        "monthly": d / "monthly.csv",
        "meta": d / "meta.csv",
        "factors": d / "factors.csv",
    }
    if (d / "daily_factors.csv").exists():
        paths["daily_factors"] = d / "daily_factors.csv"
    return paths


def load_panel(paths, config: IngestConfig | None = None) -> StockPanel:
    """Load a stock panel from the documented CSV files.

    ``paths`` is either a directory containing weekly.csv, daily.csv,
    monthly.csv, meta.csv and factors.csv (daily_factors.csv optional),
    or a dict mapping those role names to explicit paths.  Raises
    :class:`SchemaError` with file/line/column detail on the first
    malformed row, duplicate key, or non-monotonic date sequence.
    """
    config = config or IngestConfig()
    if not isinstance(paths, dict):
        paths = default_paths(paths)

    # weekly
    p = paths["weekly"]
    raw = _read_raw(p, WEEKLY_COLUMNS)
    sid = _parse_stock_id(raw, p)
    week_end = _parse_date(raw, "week_end", p)
    _check_keys(sid, pd.DatetimeIndex(week_end), p, "week_end")
    close = _parse_float(raw, "close", p)
    volume = _parse_float(raw, "volume", p)
    shares = _parse_float(raw, "shares_outstanding", p)
    _check_positive(close, sid, p, "close")
    _check_positive(volume, sid, p, "volume", allow_zero=True)
    _check_positive(shares, sid, p, "shares_outstanding")
    weekly_close = _pivot(sid, week_end, close, "week_end")
    weekly_volume = _pivot(sid, week_end, volume, "week_end")
    weekly_shares = _pivot(sid, week_end, shares, "week_end")

    # daily
    p = paths["daily"]
    raw = _read_raw(p, DAILY_COLUMNS)
    sid = _parse_stock_id(raw, p)
    date = _parse_date(raw, "date", p)
    _check_keys(sid, pd.DatetimeIndex(date), p, "date")
    dret = _parse_float(raw, "return", p)
    daily_return = _pivot(sid, date, dret, "date")

    # monthly
    p = paths["monthly"]
    raw = _read_raw(p, MONTHLY_COLUMNS)
    sid = _parse_stock_id(raw, p)
    month = _parse_month(raw, "month", p)
    _check_keys(sid, month, p, "month")
    mret = _parse_float(raw, "return", p)
    mclose = _parse_float(raw, "close", p)
    mcap = _parse_float(raw, "market_cap", p)
    mvol = _parse_float(raw, "volume", p)
    black = _parse_flag(raw, "blacklisted", p)
    trad = _parse_flag(raw, "tradable", p)
    cash = _parse_float(raw, "cash_flow", p)
    _check_positive(mcap, sid, p, "market_cap")
    monthly = {
        name: _pivot(sid, month, vals, "month")
        for name, vals in [
            ("return", mret), ("close", mclose), ("market_cap", mcap),
            ("volume", mvol), ("blacklisted", black), ("tradable", trad),
            ("cash_flow", cash),
        ]
    }

    # meta
    p = paths["meta"]
    raw = _read_raw(p, META_COLUMNS)
    sid = _parse_stock_id(raw, p)
    if sid.duplicated().any():
        i = int(np.flatnonzero(sid.duplicated().to_numpy())[0])
        raise DuplicateKeyError(f"duplicate stock_id {sid.iloc[i]}", file=str(p), line=i + 2, column="stock_id")
    listing = _parse_date(raw, "listing_date", p)
    meta = pd.DataFrame({"listing_date": pd.DatetimeIndex(listing)}, index=sid.to_numpy()).sort_index()
    meta.index.name = "stock_id"

    # factors (monthly, market-wide)
    p = paths["factors"]
    raw = _read_raw(p, FACTOR_COLUMNS)
    fmonth = _parse_month(raw, "month", p)
    if fmonth.duplicated().any():
        i = int(np.flatnonzero(fmonth.duplicated())[0])
        raise DuplicateKeyError(f"duplicate month {fmonth[i]}", file=str(p), line=i + 2, column="month")
    factors = pd.DataFrame(
        {c: _parse_float(raw, c, p).to_numpy() for c in FACTOR_COLUMNS[1:]},
        index=fmonth,
    ).sort_index()
    factors.index.name = "month"

    daily_factors = None
    if "daily_factors" in paths:
        p = paths["daily_factors"]
        raw = _read_raw(p, DAILY_FACTOR_COLUMNS)
        fdate = pd.DatetimeIndex(_parse_date(raw, "date", p))
        if fdate.duplicated().any():
            i = int(np.flatnonzero(fdate.duplicated())[0])
            raise DuplicateKeyError(f"duplicate date {fdate[i]}", file=str(p), line=i + 2, column="date")
        daily_factors = pd.DataFrame(
            {c: _parse_float(raw, c, p).to_numpy() for c in DAILY_FACTOR_COLUMNS[1:]},
            index=fdate,
        ).sort_index()
        daily_factors.index.name = "date"

    panel = StockPanel(
        weekly_close=weekly_close,
        weekly_volume=weekly_volume,
        weekly_shares=weekly_shares,
        daily_return=daily_return,
        monthly_return=monthly["return"],
        monthly_close=monthly["close"],
        monthly_cap=monthly["market_cap"],
        monthly_volume=monthly["volume"],
        monthly_blacklisted=monthly["blacklisted"],
        monthly_tradable=monthly["tradable"],
        monthly_cashflow=monthly["cash_flow"],
        meta=meta,
        factors=factors,
        daily_factors=daily_factors,
    )
    panel = _trim(panel, config)
    return align_calendars(panel)


def _trim(panel: StockPanel, config: IngestConfig) -> StockPanel:
    if config.sample_start is None and config.sample_end is None:
        return panel
    start = pd.Period(config.sample_start, freq="M") if config.sample_start else None
    end = pd.Period(config.sample_end, freq="M") if config.sample_end else None

    def keep_m(frame):
        idx = frame.index
        mask = np.ones(len(idx), dtype=bool)
        if start is not None:
            mask &= idx >= start
        if end is not None:
            mask &= idx <= end
        return frame.loc[mask]

    def keep_d(frame):
        if frame is None:
            return None
        idx = frame.index.to_period("M")
        mask = np.ones(len(idx), dtype=bool)
        if start is not None:
            mask &= idx >= start
        if end is not None:
            mask &= idx <= end
        return frame.loc[mask]

    return replace(
        panel,
        weekly_close=keep_d(panel.weekly_close),
        weekly_volume=keep_d(panel.weekly_volume),
        weekly_shares=keep_d(panel.weekly_shares),
        daily_return=keep_d(panel.daily_return),
        monthly_return=keep_m(panel.monthly_return),
        monthly_close=keep_m(panel.monthly_close),
        monthly_cap=keep_m(panel.monthly_cap),
        monthly_volume=keep_m(panel.monthly_volume),
        monthly_blacklisted=keep_m(panel.monthly_blacklisted),
        monthly_tradable=keep_m(panel.monthly_tradable),
        monthly_cashflow=keep_m(panel.monthly_cashflow),
        factors=keep_m(panel.factors),
        daily_factors=keep_d(panel.daily_factors),
    )


def align_calendars(panel: StockPanel) -> StockPanel:
    """Reindex every per-stock series onto union calendars and a union stock axis.

    Absent observations become explicit NaNs.  Idempotent.  Raises
    :class:`EmptyPanelError` when no stock has any data.
    """
    weekly = [panel.weekly_close, panel.weekly_volume, panel.weekly_shares]
    monthly = list(panel.monthly_frames().values())

    week_index = weekly[0].index
    for f in weekly[1:]:
        week_index = week_index.union(f.index)
    month_index = monthly[0].index
    for f in monthly[1:]:
        month_index = month_index.union(f.index)
    day_index = panel.daily_return.index.sort_values()

    stocks = set(panel.meta.index)
    for f in weekly + monthly + [panel.daily_return]:
        stocks |= set(f.columns)
    stocks = sorted(stocks)

    if len(week_index) == 0 and len(month_index) == 0 and len(day_index) == 0:
        raise EmptyPanelError("no stock has any dated observation")

    def rx(frame, index):
        return frame.reindex(index=index, columns=stocks)

    return replace(
        panel,
        weekly_close=rx(panel.weekly_close, week_index),
        weekly_volume=rx(panel.weekly_volume, week_index),
        weekly_shares=rx(panel.weekly_shares, week_index),
        daily_return=rx(panel.daily_return, day_index),
        monthly_return=rx(panel.monthly_return, month_index),
        monthly_close=rx(panel.monthly_close, month_index),
        monthly_cap=rx(panel.monthly_cap, month_index),
        monthly_volume=rx(panel.monthly_volume, month_index),
        monthly_blacklisted=rx(panel.monthly_blacklisted, month_index),
        monthly_tradable=rx(panel.monthly_tradable, month_index),
        monthly_cashflow=rx(panel.monthly_cashflow, month_index),
        meta=panel.meta.reindex(stocks),
    )


def _fmt(x) -> str:
    return "" if pd.isna(x) else repr(float(x))


def _fmt_flag(x) -> str:
    return "" if pd.isna(x) else str(int(x))


def save_panel(panel: StockPanel, out_dir) -> dict[str, Path]:
    """Write the panel back to the five documented CSVs.

    Floats are written with full round-trip precision so that saving
    and reloading reproduces the panel bit-for-bit.  Rows where every
    value field is missing are omitted.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    def write(name, header, rows):
        path = out / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(row) + "\n")
        paths[name.split(".")[0]] = path

    week_labels = [w.strftime("%Y-%m-%d") for w in panel.weeks]
    wc, wv, ws = (f.to_numpy(dtype=float) for f in
                  (panel.weekly_close, panel.weekly_volume, panel.weekly_shares))
    rows = []
    for j, stock in enumerate(panel.stocks):
        keep = ~(np.isnan(wc[:, j]) & np.isnan(wv[:, j]) & np.isnan(ws[:, j]))
        for i in np.flatnonzero(keep):
            rows.append((stock, week_labels[i], _fmt(wc[i, j]), _fmt(wv[i, j]), _fmt(ws[i, j])))
    write("weekly.csv", WEEKLY_COLUMNS, rows)

    day_labels = [d.strftime("%Y-%m-%d") for d in panel.daily_return.index]
    dr = panel.daily_return.to_numpy(dtype=float)
    rows = []
    for j, stock in enumerate(panel.stocks):
        for i in np.flatnonzero(~np.isnan(dr[:, j])):
            rows.append((stock, day_labels[i], _fmt(dr[i, j])))
    write("daily.csv", DAILY_COLUMNS, rows)

    month_labels = [str(m) for m in panel.months]
    frames = panel.monthly_frames()
    order = ["return", "close", "market_cap", "volume", "blacklisted", "tradable", "cash_flow"]
    arrays = [frames[name].to_numpy(dtype=float) for name in order]
    rows = []
    for j, stock in enumerate(panel.stocks):
        keep = np.zeros(len(panel.months), dtype=bool)
        for a in arrays:
            keep |= ~np.isnan(a[:, j])
        for i in np.flatnonzero(keep):
            rows.append((
                stock, month_labels[i],
                _fmt(arrays[0][i, j]), _fmt(arrays[1][i, j]), _fmt(arrays[2][i, j]),
                _fmt(arrays[3][i, j]), _fmt_flag(arrays[4][i, j]),
                _fmt_flag(arrays[5][i, j]), _fmt(arrays[6][i, j]),
            ))
    write("monthly.csv", MONTHLY_COLUMNS, rows)

    rows = [
        (stock, "" if pd.isna(ld) else ld.strftime("%Y-%m-%d"))
        for stock, ld in panel.meta["listing_date"].items()
    ]
    write("meta.csv", META_COLUMNS, rows)

    fvals = panel.factors[FACTOR_COLUMNS[1:]].to_numpy(dtype=float)
    rows = [
        (str(month), *(_fmt(v) for v in fvals[i]))
        for i, month in enumerate(panel.factors.index)
    ]
    write("factors.csv", FACTOR_COLUMNS, rows)

    if panel.daily_factors is not None:
        dvals = panel.daily_factors[DAILY_FACTOR_COLUMNS[1:]].to_numpy(dtype=float)
        rows = [
            (day.strftime("%Y-%m-%d"), *(_fmt(v) for v in dvals[i]))
            for i, day in enumerate(panel.daily_factors.index)
        ]
        write("daily_factors.csv", DAILY_FACTOR_COLUMNS, rows)

    return paths
