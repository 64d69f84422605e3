"""Quantile sorts, long-short portfolios, Sharpe ratios, costs, benchmarks.

Positions open at 09:30 using the previous day's signal cross-section and
close at 16:00, so daily portfolio returns are open-to-close market-excess
returns and turnover is always 100%.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .util import DataError, NumericalError

MOMENTUM, REVERSAL = "momentum", "reversal"

# iso and nis_s imbalances lean with next-day returns; the rest lean against.
DEFAULT_DIRECTIONS = {
    "all": REVERSAL,
    "iso": MOMENTUM,
    "nis": REVERSAL,
    "nis_s": MOMENTUM,
    "nis_c": REVERSAL,
    "nis_b": REVERSAL,
}

DEFAULT_RF_DAILY = 0.0000625
TRADING_DAYS = 252


@dataclass
class SortSpec:
    primary: str
    secondary: str | None = None
    n_buckets: int = 5
    directions: dict = field(default_factory=lambda: dict(DEFAULT_DIRECTIONS))
    degenerate_policy: str = "zero"  # or "skip"

    def __post_init__(self):
        if self.n_buckets < 2:
            raise DataError("n_buckets must be >= 2")
        if self.degenerate_policy not in ("zero", "skip"):
            raise DataError(f"unknown degenerate policy {self.degenerate_policy!r}")

    @property
    def label(self) -> str:
        return self.primary if self.secondary is None else f"{self.primary}/{self.secondary}"

    def direction(self, signal: str) -> str:
        d = self.directions.get(signal, REVERSAL)
        if d not in (MOMENTUM, REVERSAL):
            raise DataError(f"direction for {signal!r} must be momentum or reversal")
        return d


@dataclass
class PortfolioSeries:
    label: str
    returns: pd.DataFrame       # day, ret, flag ('' | 'degenerate' | 'empty_leg')
    constituents: pd.DataFrame  # day, symbol, weight


def quantile_sort(values: np.ndarray, n_buckets: int = 5) -> tuple[np.ndarray, bool]:
    """Assign cross-sectional quantile buckets 1..n_buckets.

    Breakpoints sit at the k/n empirical quantiles; bucket b holds the
    right-closed interval (q_{(b-1)/n}, q_{b/n}], so equal signals always land
    in the same bucket. An all-equal cross-section is degenerate: everything
    goes to the middle bucket and the flag comes back True.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) < n_buckets:
        raise DataError(f"need at least {n_buckets} signals, got {len(values)}")
    if np.isnan(values).any():
        raise DataError("signal values must be non-missing (filter first)")
    if np.ptp(values) == 0.0:
        return np.full(len(values), (n_buckets + 1) // 2, dtype=np.int64), True
    qs = np.quantile(values, np.arange(1, n_buckets) / n_buckets)
    return np.searchsorted(qs, values, side="left") + 1, False


def double_sort(
    values_a: np.ndarray, values_b: np.ndarray, n_buckets: int = 5
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Independent (unconditional) sorts on two signals over the same stocks."""
    if len(values_a) != len(values_b):
        raise DataError("double sort needs aligned signal vectors")
    ba, da = quantile_sort(values_a, n_buckets)
    bb, db = quantile_sort(values_b, n_buckets)
    return ba, bb, da or db


def _leg_means(excess: np.ndarray, long_mask: np.ndarray, short_mask: np.ndarray):
    if long_mask.sum() == 0 or short_mask.sum() == 0:
        return None
    return float(excess[long_mask].mean()) - float(excess[short_mask].mean())


def build_long_short(
    signals: pd.DataFrame,
    returns: pd.DataFrame,
    spec: SortSpec,
) -> PortfolioSeries:
    """Daily-rebalanced equal-weight long-short portfolio.

    `signals` has columns symbol/day/value (plus value2 when double-sorting);
    `returns` has symbol/day/excess. Day-t positions come from the previous
    trading day's signals. Momentum longs the top bucket, reversal the
    bottom; a double sort longs the corner where both signals are at their
    favorable extreme and shorts the opposite corner. Days where a leg is
    empty or the cross-section is degenerate contribute a zero (flagged)
    return under the default policy, or are dropped under "skip".
    """
    need = ["value", "value2"] if spec.secondary is not None else ["value"]
    for col in need:
        if col not in signals.columns:
            raise DataError(f"signals table lacks column {col!r}")
    days = sorted(returns["day"].unique())
    sig_by_day = {d: g for d, g in signals.groupby("day", sort=True)}
    ret_by_day = {d: g.set_index("symbol")["excess"] for d, g in returns.groupby("day", sort=True)}

    rows = []
    members = []
    for prev, day in zip(days, days[1:]):
        sig = sig_by_day.get(prev)
        if sig is None:
            continue
        sig = sig.dropna(subset=need).sort_values("symbol", kind="stable")
        ret = ret_by_day[day]
        sig = sig[sig["symbol"].isin(ret.index)]
        flag = ""
        lsret = None
        if len(sig) >= spec.n_buckets:
            try:
                if spec.secondary is None:
                    buckets, degen = quantile_sort(sig["value"].to_numpy(), spec.n_buckets)
                    top, bot = buckets == spec.n_buckets, buckets == 1
                    if spec.direction(spec.primary) == MOMENTUM:
                        long_mask, short_mask = top, bot
                    else:
                        long_mask, short_mask = bot, top
                else:
                    ba, bb, degen = double_sort(
                        sig["value"].to_numpy(), sig["value2"].to_numpy(), spec.n_buckets
                    )
                    fav_a = spec.n_buckets if spec.direction(spec.primary) == MOMENTUM else 1
                    fav_b = spec.n_buckets if spec.direction(spec.secondary) == MOMENTUM else 1
                    opp_a = spec.n_buckets + 1 - fav_a
                    opp_b = spec.n_buckets + 1 - fav_b
                    long_mask = (ba == fav_a) & (bb == fav_b)
                    short_mask = (ba == opp_a) & (bb == opp_b)
            except DataError:
                degen = True
            if degen:
                flag = "degenerate"
            else:
                excess = ret.loc[sig["symbol"]].to_numpy()
                lsret = _leg_means(excess, long_mask, short_mask)
                if lsret is None:
                    flag = "empty_leg"
                else:
                    syms = sig["symbol"].to_numpy()
                    for s, w in zip(syms[long_mask], np.repeat(1.0 / long_mask.sum(), long_mask.sum())):
                        members.append((day, s, w))
                    for s, w in zip(syms[short_mask], np.repeat(-1.0 / short_mask.sum(), short_mask.sum())):
                        members.append((day, s, w))
        else:
            flag = "degenerate"
        if lsret is None:
            if spec.degenerate_policy == "skip":
                continue
            lsret = 0.0
        rows.append((day, lsret, flag))

    return PortfolioSeries(
        label=spec.label,
        returns=pd.DataFrame(rows, columns=["day", "ret", "flag"]),
        constituents=pd.DataFrame(members, columns=["day", "symbol", "weight"]),
    )


def sharpe(returns: np.ndarray, rf_daily: float = DEFAULT_RF_DAILY) -> float:
    """Annualized Sharpe ratio with the sample (n-1) standard deviation."""
    r = np.asarray(returns, dtype=np.float64)
    if len(r) < 2:
        raise NumericalError("Sharpe ratio needs at least 2 observations")
    sd = r.std(ddof=1)
    if sd == 0.0 or np.ptp(r) == 0.0:  # ptp catches constant series despite mean rounding
        raise NumericalError("Sharpe ratio undefined: zero return volatility")
    return float((r.mean() - rf_daily) / sd * np.sqrt(TRADING_DAYS))


def apply_costs(series: PortfolioSeries, round_trip_bps: float) -> PortfolioSeries:
    """Subtract a flat round-trip cost from every day (daily turnover is 100%)."""
    if round_trip_bps < 0:
        raise DataError("transaction cost must be >= 0 bps")
    ret = series.returns.copy()
    ret["ret"] = ret["ret"] - round_trip_bps * 1e-4
    label = series.label if round_trip_bps == 0 else f"{series.label}@{round_trip_bps:g}bps"
    return PortfolioSeries(label=label, returns=ret, constituents=series.constituents)


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------


def umd_factor(returns: pd.DataFrame) -> pd.DataFrame:
    """Zero-investment momentum factor: long the top half of the universe by
    previous-day excess return, short the bottom half (ties to the bottom)."""
    days = sorted(returns["day"].unique())
    by_day = {d: g.set_index("symbol")["excess"] for d, g in returns.groupby("day", sort=True)}
    rows = []
    for prev, day in zip(days, days[1:]):
        sig = by_day[prev]
        ret = by_day[day]
        common = sig.index.intersection(ret.index)
        if len(common) < 2:
            continue
        s = sig.loc[common]
        top = s > s.median()
        if top.sum() == 0 or (~top).sum() == 0:
            rows.append((day, 0.0))
            continue
        rows.append((day, float(ret.loc[common][top].mean() - ret.loc[common][~top].mean())))
    return pd.DataFrame(rows, columns=["day", "umd"])


def build_benchmarks(
    coi_wide_df: pd.DataFrame,
    returns: pd.DataFrame,
    bars: pd.DataFrame | None = None,
    spy_ticker: str = "SPY",
    n_buckets: int = 5,
) -> dict[str, PortfolioSeries]:
    """Reference portfolios: undecomposed-imbalance long-short, return
    momentum, equal weight, and SPY held open-to-close and close-to-close.

    SPY series require its rows in `returns`/`bars` and are omitted otherwise.
    """
    stocks = returns[returns["symbol"] != spy_ticker]
    out: dict[str, PortfolioSeries] = {}

    sig_all = coi_wide_df[["symbol", "day", "coi_all"]].rename(columns={"coi_all": "value"})
    out["all"] = build_long_short(sig_all, stocks, SortSpec(primary="all", n_buckets=n_buckets))

    sig_mom = stocks[["symbol", "day", "excess"]].rename(columns={"excess": "value"})
    mom_spec = SortSpec(primary="ret", n_buckets=n_buckets, directions={"ret": MOMENTUM})
    mom = build_long_short(sig_mom, stocks, mom_spec)
    mom.label = "return_momentum"
    out["return_momentum"] = mom

    ew = (
        stocks.groupby("day", sort=True)["excess"]
        .mean()
        .reset_index()
        .rename(columns={"excess": "ret"})
    )
    ew["flag"] = ""
    out["equal_weight"] = PortfolioSeries(
        label="equal_weight",
        returns=ew[["day", "ret", "flag"]],
        constituents=pd.DataFrame(columns=["day", "symbol", "weight"]),
    )

    spy = returns[returns["symbol"] == spy_ticker]
    if len(spy):
        oc = spy[["day", "raw_oc"]].rename(columns={"raw_oc": "ret"}).sort_values("day")
        oc["flag"] = ""
        out["spy_oc"] = PortfolioSeries(
            "spy_oc", oc[["day", "ret", "flag"]].reset_index(drop=True),
            pd.DataFrame(columns=["day", "symbol", "weight"]),
        )
    if bars is not None:
        spy_bars = bars[bars["ticker"] == spy_ticker].sort_values("day")
        if len(spy_bars) >= 2:
            close = spy_bars["close"].to_numpy()
            cc = pd.DataFrame(
                {"day": spy_bars["day"].to_numpy()[1:], "ret": np.diff(np.log(close)), "flag": ""}
            )
            out["spy_cc"] = PortfolioSeries(
                "spy_cc", cc, pd.DataFrame(columns=["day", "symbol", "weight"])
            )
    return out


def summarize(
    series_map: dict[str, PortfolioSeries], rf_daily: float = DEFAULT_RF_DAILY
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Annualized mean return (x252), Sharpe ratio, and cumulative-return paths.

    Cumulative returns are running sums, consistent with log-based daily
    open-to-close returns.
    """
    rows = []
    cum_rows = []
    for label in sorted(series_map):
        s = series_map[label]
        r = s.returns["ret"].to_numpy()
        if len(r) == 0:
            continue
        try:
            sr = sharpe(r, rf_daily)
        except NumericalError:
            sr = float("nan")
        rows.append(
            {
                "label": label,
                "n_days": len(r),
                "ann_return": float(r.mean()) * TRADING_DAYS,
                "sharpe": sr,
                "flagged_days": int((s.returns["flag"] != "").sum()),
            }
        )
        cum = np.cumsum(r)
        cum_rows.extend(
            {"label": label, "day": d, "cum_return": c}
            for d, c in zip(s.returns["day"], cum)
        )
    return pd.DataFrame(rows), pd.DataFrame(cum_rows, columns=["label", "day", "cum_return"])
