import numpy as np
import pandas as pd
import pytest

from cgolab.errors import InsufficientDataError, RankDeficiencyError
from cgolab.proxies import (
    beta,
    cfvol,
    compute_proxies,
    inv_age,
    ivol,
    retvol,
    rolling_beta,
    rolling_retvol,
)

from conftest import make_panel


def two_pass_sd(values):
    values = np.asarray(values, dtype=float)
    values = values[~np.isnan(values)]
    m = values.sum() / len(values)
    return np.sqrt(((values - m) ** 2).sum() / (len(values) - 1))


# ---------------------------------------------------------------- beta

def test_beta_identity_regression():
    rng = np.random.default_rng(0)
    mkt = rng.normal(0.01, 0.05, size=60)
    assert beta(mkt, mkt) == pytest.approx(1.0, abs=1e-10)


def test_beta_exact_linear():
    rng = np.random.default_rng(1)
    mkt = rng.normal(0.0, 0.04, size=60)
    assert beta(2.0 * mkt, mkt) == pytest.approx(2.0, abs=1e-12)


def test_beta_cov_var_oracle():
    rng = np.random.default_rng(2)
    mkt = rng.normal(0.005, 0.05, size=60)
    stock = 0.8 * mkt + rng.normal(0, 0.03, size=60)
    xd = mkt - mkt.mean()
    oracle = np.dot(xd, stock - stock.mean()) / np.dot(xd, xd)
    assert beta(stock, mkt) == pytest.approx(oracle, abs=1e-10)


def test_beta_affine_equivariance():
    rng = np.random.default_rng(3)
    mkt = rng.normal(0, 0.05, size=60)
    stock = 1.3 * mkt + rng.normal(0, 0.02, size=60)
    base = beta(stock, mkt)
    for b in (-1.0, 0.5, 2.0):
        assert beta(7.0 + b * stock, mkt) == pytest.approx(b * base, abs=1e-10)


def test_beta_preconditions():
    with pytest.raises(InsufficientDataError):
        beta(np.full(30, 0.01), np.full(30, 0.01))
    with pytest.raises(InsufficientDataError):
        beta(np.random.default_rng(0).normal(size=60), np.full(60, 0.01))  # zero market variance


def test_beta_uses_aligned_pairs_only():
    rng = np.random.default_rng(4)
    mkt = rng.normal(0, 0.05, size=60)
    stock = 1.5 * mkt.copy()
    stock[:10] = np.nan
    assert beta(stock, mkt) == pytest.approx(1.5, abs=1e-12)


# ---------------------------------------------------------------- retvol

def test_retvol_cases():
    assert retvol(np.full(60, 0.02)) == pytest.approx(0.0, abs=1e-15)
    r = 0.03
    alternating = np.tile([r, -r], 30)
    assert retvol(alternating) == pytest.approx(r * np.sqrt(60 / 59), rel=1e-12)
    rng = np.random.default_rng(5)
    window = rng.normal(0.01, 0.06, size=60)
    assert retvol(window) == pytest.approx(two_pass_sd(window), abs=1e-12)
    with pytest.raises(InsufficientDataError):
        retvol(np.full(10, 0.01))


def test_retvol_shift_and_scale():
    rng = np.random.default_rng(6)
    window = rng.normal(0, 0.05, size=60)
    base = retvol(window)
    assert retvol(window + 0.37) == pytest.approx(base, abs=1e-12)
    for b in (-2.0, 0.5):
        assert retvol(window * b) == pytest.approx(abs(b) * base, rel=1e-12)


def test_retvol_planted_rank_recovery():
    # strictly increasing planted dispersion must reproduce ranks exactly
    sds = np.linspace(0.01, 0.10, 10)
    windows = [np.tile([s, -s], 30) for s in sds]
    estimates = [retvol(w) for w in windows]
    assert list(np.argsort(estimates)) == list(range(10))


# ---------------------------------------------------------------- ivol

def _factor_frame(n, seed=0, zero=False):
    rng = np.random.default_rng(seed)
    if zero:
        data = np.zeros((n, 3))
    else:
        data = rng.normal(0, 0.01, size=(n, 3))
    frame = pd.DataFrame(data, columns=["mkt_excess", "smb", "hml"])
    frame["risk_free"] = 0.0001
    return frame


def test_ivol_exact_factor_linear_is_zero():
    fac = _factor_frame(21, seed=7)
    y = fac["risk_free"] + 0.9 * fac["mkt_excess"] - 0.3 * fac["smb"] + 0.5 * fac["hml"] + 0.002
    assert ivol(y, fac) == pytest.approx(0.0, abs=1e-12)


def test_ivol_zero_factors_reduce_to_sd_about_mean():
    fac = _factor_frame(21, zero=True)
    rng = np.random.default_rng(8)
    returns = rng.normal(0.001, 0.02, size=21)
    expected = two_pass_sd(returns - fac["risk_free"].to_numpy())
    assert ivol(pd.Series(returns), fac) == pytest.approx(expected, rel=1e-12)


def test_ivol_normal_equations_oracle():
    fac = _factor_frame(21, seed=9)
    rng = np.random.default_rng(10)
    returns = (0.0001 + 1.1 * fac["mkt_excess"] + rng.normal(0, 0.01, size=21)).to_numpy()
    got = ivol(pd.Series(returns), fac)

    X = np.column_stack([np.ones(21), fac[["mkt_excess", "smb", "hml"]].to_numpy()])
    y = returns - fac["risk_free"].to_numpy()
    coef = np.linalg.solve(X.T @ X, X.T @ y)  # independent 4x4 normal equations
    resid = y - X @ coef
    expected = np.sqrt(resid @ resid / (21 - 4))
    assert got == pytest.approx(expected, abs=1e-10)


def test_ivol_preconditions():
    fac = _factor_frame(10)
    with pytest.raises(InsufficientDataError):
        ivol(pd.Series(np.zeros(10)), fac)
    fac = _factor_frame(21, seed=11)
    fac["smb"] = fac["mkt_excess"]  # exact collinearity
    with pytest.raises(RankDeficiencyError):
        ivol(pd.Series(np.random.default_rng(0).normal(size=21)), fac)


# ---------------------------------------------------------------- inv_age

def test_inv_age_cases():
    month = pd.Period("2010-06", freq="M")
    end = month.to_timestamp(how="end").normalize()
    ten = end - pd.Timedelta(days=round(10 * 365.25))
    assert inv_age(ten, month) == pytest.approx(0.1, rel=1e-9)
    two = end - pd.Timedelta(days=round(2 * 365.25))
    assert inv_age(two, month) == pytest.approx(0.5, rel=1e-9)
    with pytest.raises(InsufficientDataError):
        inv_age(end - pd.Timedelta(days=182), month)


# ---------------------------------------------------------------- cfvol

def test_cfvol_cases():
    assert cfvol(np.full(5, 3.0), 1.0) == 0.0
    assert cfvol(np.array([1.0, 2.0, 3.0]), 1.0) == pytest.approx(1.0, abs=1e-12)
    rng = np.random.default_rng(12)
    flows = rng.normal(5e7, 2e7, size=5)
    assert cfvol(flows, 2e9) == pytest.approx(two_pass_sd(flows / 2e9), rel=1e-10)
    with pytest.raises(InsufficientDataError):
        cfvol(np.array([1.0, 2.0, np.nan, np.nan, np.nan]), 1.0)
    with pytest.raises(ValueError):
        cfvol(np.array([1.0, 2.0, 3.0]), 0.0)


# ----------------------------------------------------- panel drivers

def _driver_panel(seed=13, n_months=80, n_stocks=4):
    rng = np.random.default_rng(seed)
    months = n_months
    stocks = [f"S{i}" for i in range(n_stocks)]
    mkt = rng.normal(0.005, 0.05, size=months)
    rf = np.full(months, 0.002)
    betas = np.linspace(0.5, 2.0, n_stocks)
    ret = rf[:, None] + betas * mkt[:, None] + rng.normal(0, 0.04, size=(months, n_stocks))
    factors = pd.DataFrame(
        {"mkt_excess": mkt, "smb": 0.0, "hml": 0.0, "risk_free": rf},
        index=pd.period_range("2000-01", periods=months, freq="M"),
    )
    panel = make_panel(stocks, n_months=months, monthly_return=ret, factors=factors)
    return panel, betas


def test_rolling_beta_matches_scalar():
    panel, betas = _driver_panel()
    frame = rolling_beta(panel.monthly_return, panel.factors)
    rf = panel.factors["risk_free"]
    mkt = panel.factors["mkt_excess"]
    i, j = 70, 2
    window = slice(i - 59, i + 1)
    stock_excess = (panel.monthly_return.iloc[window, j] - rf.iloc[window]).to_numpy()
    expected = beta(stock_excess, mkt.iloc[window].to_numpy())
    assert frame.iloc[i, j] == pytest.approx(expected, rel=1e-10)
    assert np.isnan(frame.iloc[20, j])  # under min_obs


def test_rolling_beta_recovers_planted_ordering():
    panel, betas = _driver_panel(seed=14, n_months=120)
    frame = rolling_beta(panel.monthly_return, panel.factors)
    last = frame.iloc[-1].to_numpy()
    assert list(np.argsort(last)) == list(np.argsort(betas))


def test_rolling_retvol_matches_scalar():
    panel, _ = _driver_panel(seed=15)
    frame = rolling_retvol(panel.monthly_return)
    i, j = 75, 1
    window = panel.monthly_return.iloc[i - 59:i + 1, j].to_numpy()
    assert frame.iloc[i, j] == pytest.approx(retvol(window), rel=1e-12)


def test_compute_proxies_causality():
    panel, _ = _driver_panel(seed=16)
    res1 = compute_proxies(panel, ("beta", "retvol", "inv_age"))
    cut = 60
    tampered = panel.monthly_return.to_numpy().copy()
    tampered[cut + 1:] = 9.9
    panel2 = make_panel(
        panel.stocks, n_months=len(panel.months), monthly_return=tampered,
        factors=panel.factors,
    )
    res2 = compute_proxies(panel2, ("beta", "retvol", "inv_age"))
    for name in ("beta", "retvol", "inv_age"):
        a = res1[name].iloc[:cut + 1].to_numpy()
        b = res2[name].iloc[:cut + 1].to_numpy()
        assert np.array_equal(a, b, equal_nan=True), name


def test_compute_proxies_cfvol_annual_observations():
    n_months = 84
    stocks = ["A"]
    cash = np.full((n_months, 1), np.nan)
    months = pd.period_range("2000-01", periods=n_months, freq="M")
    # report once a year in December, constant scaled level
    caps = np.full((n_months, 1), 2e9)
    for i, m in enumerate(months):
        if m.month == 12:
            cash[i, 0] = 1e8
    panel = make_panel(stocks, n_months=n_months, cash_flow=cash, market_cap=caps)
    res = compute_proxies(panel, ("cfvol",))
    val = res["cfvol"].loc[pd.Period("2006-06"), "A"]
    assert val == pytest.approx(0.0, abs=1e-15)  # constant scaled flows
    assert np.isnan(res["cfvol"].loc[pd.Period("2001-06"), "A"])  # <3 annual obs


def test_compute_proxies_ivol_flat_fallback_flagged():
    panel, _ = _driver_panel(seed=17)
    res = compute_proxies(panel, ("ivol",))
    assert res.metadata["ivol_factor_source"] == "monthly-flat"
