"""Tick-data ingestion: LOBSTER message parsing, trade inference, returns, factors.

Price convention: integer units of 1e-4 dollars ("price4") everywhere trades
are involved; daily bars are decimal dollars.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .util import (
    DataError,
    INTERVAL_NS,
    N_INTERVALS,
    NS_PER_SEC,
    SESSION_CLOSE_NS,
    SESSION_OPEN_NS,
)

log = logging.getLogger(__name__)

MESSAGE_COLUMNS = ["ts_ns", "event", "order_id", "size", "price", "direction"]

# LOBSTER event types
EVENT_EXEC_VISIBLE = 4
EVENT_EXEC_HIDDEN = 5

TRADE_COLUMNS = ["symbol", "day", "ts_ns", "dir", "size", "price4"]


@dataclass
class SymbolTable:
    """Ticker universe with study-universe and market-index membership flags."""

    tickers: list[str]
    universe_mask: np.ndarray
    market_mask: np.ndarray

    def __post_init__(self):
        if len(set(self.tickers)) != len(self.tickers):
            raise DataError("duplicate tickers in symbol table")
        self.universe_mask = np.asarray(self.universe_mask, dtype=bool)
        self.market_mask = np.asarray(self.market_mask, dtype=bool)
        if len(self.universe_mask) != len(self.tickers) or len(self.market_mask) != len(self.tickers):
            raise DataError("membership masks must match ticker count")
        self._index = {t: i for i, t in enumerate(self.tickers)}

    @classmethod
    def from_lists(cls, universe: list[str], market: list[str] | None = None) -> "SymbolTable":
        market = list(universe) if market is None else list(market)
        tickers = list(dict.fromkeys(list(universe) + market))
        uni = set(universe)
        mkt = set(market)
        return cls(
            tickers=tickers,
            universe_mask=np.array([t in uni for t in tickers]),
            market_mask=np.array([t in mkt for t in tickers]),
        )

    def id_of(self, ticker: str) -> int:
        try:
            return self._index[ticker]
        except KeyError:
            raise DataError(f"unknown ticker {ticker!r}") from None

    @property
    def universe_ids(self) -> np.ndarray:
        return np.flatnonzero(self.universe_mask)

    @property
    def market_ids(self) -> np.ndarray:
        return np.flatnonzero(self.market_mask)


def _seconds_str_to_ns(col: pd.Series, path, offset: int = 0) -> np.ndarray:
    """Exact decimal-seconds -> integer ns conversion (no float round trip)."""
    parts = col.str.strip().str.partition(".")
    secs = pd.to_numeric(parts[0], errors="coerce")
    frac = parts[2].str.ljust(9, "0").str.slice(0, 9)
    frac = frac.mask(parts[1] == "", "0")
    frac_ns = pd.to_numeric(frac, errors="coerce")
    bad = secs.isna() | frac_ns.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0]) + offset
        raise DataError(f"{path}: malformed time field at row {row}")
    return (secs.astype(np.int64) * NS_PER_SEC + frac_ns.astype(np.int64)).to_numpy()


def parse_lobster_messages(path) -> pd.DataFrame:
    """Read one LOBSTER message file into columns ts_ns/event/order_id/size/price/direction.

    Rows come back in file order. Raw files may interleave timestamps; that
    only warrants a warning because inference sorts afterwards.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"message file not found: {path}")
    try:
        raw = pd.read_csv(path, header=None, dtype={0: str}, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        return pd.DataFrame({c: pd.Series(dtype=np.int64) for c in MESSAGE_COLUMNS})
    except pd.errors.ParserError:
        return _parse_messages_slow(path)
    if raw.shape[1] < 6:
        return _parse_messages_slow(path)  # produces a row-numbered error
    raw = raw.iloc[:, :6]
    raw.columns = MESSAGE_COLUMNS
    ts = _seconds_str_to_ns(raw["ts_ns"], path)
    out = pd.DataFrame({"ts_ns": ts})
    for c in MESSAGE_COLUMNS[1:]:
        vals = pd.to_numeric(raw[c], errors="coerce")
        if vals.isna().any():
            row = int(vals.isna().idxmax())
            raise DataError(f"{path}: malformed row {row} (field {c})")
        out[c] = vals.astype(np.int64)
    if len(out) > 1 and (np.diff(out["ts_ns"].to_numpy()) < 0).any():
        log.warning("%s: raw timestamps not monotone; keeping file order", path)
    return out


def _parse_messages_slow(path: Path) -> pd.DataFrame:
    """Row-by-row fallback that reports the offending row index."""
    rows = []
    with open(path, newline="") as fh:
        for i, fields in enumerate(csv.reader(fh)):
            if not fields:
                continue
            if len(fields) < 6:
                raise DataError(f"{path}: row {i} has {len(fields)} fields, expected >= 6")
            try:
                sec, _, frac = fields[0].strip().partition(".")
                ts = int(sec) * NS_PER_SEC + int((frac or "0").ljust(9, "0")[:9])
                rows.append([ts] + [int(float(x)) for x in fields[1:6]])
            except ValueError as exc:
                raise DataError(f"{path}: malformed row {i}: {exc}") from None
    return pd.DataFrame(rows, columns=MESSAGE_COLUMNS, dtype=np.int64)


def infer_trades(
    messages: pd.DataFrame,
    include_hidden: bool = False,
    conflict_policy: str = "drop",
) -> tuple[pd.DataFrame, dict]:
    """Turn executed-limit-order messages into aggressor-signed trades.

    Keeps visible executions (and hidden ones when asked), flips the limit
    direction to get the marketable side, restricts to regular hours, and
    merges rows sharing a timestamp into one trade (summed size, size-weighted
    price). Timestamp groups with conflicting directions are ambiguous; the
    default policy drops the whole group and counts it in the diagnostics.
    """
    if conflict_policy not in ("drop", "error"):
        raise DataError(f"unknown conflict policy {conflict_policy!r}")
    events = {EVENT_EXEC_VISIBLE}
    if include_hidden:
        events.add(EVENT_EXEC_HIDDEN)
    m = messages[messages["event"].isin(events)]
    m = m[(m["ts_ns"] >= SESSION_OPEN_NS) & (m["ts_ns"] <= SESSION_CLOSE_NS)]
    diagnostics = {
        "rows_in": int(len(messages)),
        "exec_rows": int(len(m)),
        "exec_shares": int(m["size"].sum()),
        "conflict_groups": 0,
        "conflict_rows": 0,
        "conflict_shares": 0,
    }
    if m.empty:
        return (
            pd.DataFrame({"ts_ns": pd.Series(dtype=np.int64), "dir": pd.Series(dtype=np.int8),
                          "size": pd.Series(dtype=np.int64), "price4": pd.Series(dtype=np.int64)}),
            diagnostics,
        )
    m = m.sort_values("ts_ns", kind="stable")
    # aggressor side is the reverse of the executed limit order's side
    aggr = -m["direction"].to_numpy()
    ts = m["ts_ns"].to_numpy()
    size = m["size"].to_numpy()
    price = m["price"].to_numpy()

    grp = np.concatenate([[0], np.cumsum(ts[1:] != ts[:-1])])
    n_groups = grp[-1] + 1
    gsize = np.bincount(grp, weights=size, minlength=n_groups)
    gnotional = np.bincount(grp, weights=size * price.astype(np.float64), minlength=n_groups)
    gts = ts[np.concatenate([[True], ts[1:] != ts[:-1]])]
    gmin = np.full(n_groups, 2, dtype=np.int64)
    gmax = np.full(n_groups, -2, dtype=np.int64)
    np.minimum.at(gmin, grp, aggr)
    np.maximum.at(gmax, grp, aggr)
    conflict = gmin != gmax

    if conflict.any():
        n_rows = int(np.isin(grp, np.flatnonzero(conflict)).sum())
        if conflict_policy == "error":
            raise DataError(f"{int(conflict.sum())} timestamp groups with conflicting directions")
        diagnostics["conflict_groups"] = int(conflict.sum())
        diagnostics["conflict_rows"] = n_rows
        diagnostics["conflict_shares"] = int(gsize[conflict].sum())
    keep = ~conflict
    out = pd.DataFrame(
        {
            "ts_ns": gts[keep],
            "dir": gmin[keep].astype(np.int8),
            "size": gsize[keep].astype(np.int64),
            "price4": np.rint(gnotional[keep] / gsize[keep]).astype(np.int64),
        }
    )
    return out.reset_index(drop=True), diagnostics


# ---------------------------------------------------------------------------
# Canonical trade CSV
# ---------------------------------------------------------------------------


def trades_to_csv(trades: pd.DataFrame, path, cfg_hash: str | None = None) -> None:
    """Write the canonical trade table: symbol,day,ts_ns,dir,size,price4 with dir B/S."""
    out = trades.copy()
    out["dir"] = np.where(out["dir"].to_numpy() > 0, "B", "S")
    from .util import write_csv

    write_csv(out[TRADE_COLUMNS], path, cfg_hash)


def trades_from_csv(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"trade file not found: {path}")
    df = pd.read_csv(path, comment="#", dtype={"symbol": str, "day": str})
    missing = set(TRADE_COLUMNS) - set(df.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    bad = ~df["dir"].isin(["B", "S"])
    if bad.any():
        raise DataError(f"{path}: dir must be B or S (row {int(bad.idxmax())})")
    df["dir"] = np.where(df["dir"] == "B", 1, -1).astype(np.int8)
    for c in ("ts_ns", "size", "price4"):
        df[c] = df[c].astype(np.int64)
    return df[TRADE_COLUMNS]


def load_trades(path) -> pd.DataFrame:
    """Load canonical trades from one CSV or every *.csv under a directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise DataError(f"no trade CSVs under {path}")
        df = pd.concat([trades_from_csv(f) for f in files], ignore_index=True)
    else:
        df = trades_from_csv(path)
    return df.sort_values(["symbol", "day", "ts_ns"], kind="stable").reset_index(drop=True)


# ---------------------------------------------------------------------------
# Daily bars, returns, factors
# ---------------------------------------------------------------------------


def read_bars(path) -> pd.DataFrame:
    """Daily bar CSV: day,ticker,open,close."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"bar file not found: {path}")
    df = pd.read_csv(path, comment="#", dtype={"day": str, "ticker": str})
    missing = {"day", "ticker", "open", "close"} - set(df.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    if (df["open"] <= 0).any() or (df["close"] <= 0).any():
        raise DataError(f"{path}: non-positive open/close price")
    if df.duplicated(["day", "ticker"]).any():
        dup = df[df.duplicated(["day", "ticker"])].iloc[0]
        raise DataError(f"{path}: duplicate bar for {dup['ticker']} on {dup['day']}")
    return df


def realized_vol(ts_ns: np.ndarray, price4: np.ndarray) -> float:
    """Realized volatility from 5-minute last-trade prices.

    Bucket the session into 5-minute intervals, take the last trade price of
    each, carry prices over empty buckets (their return is zero), and return
    sqrt(sum of squared log returns).
    """
    if len(ts_ns) == 0:
        return 0.0
    idx = np.minimum((ts_ns - SESSION_OPEN_NS) // INTERVAL_NS, N_INTERVALS - 1)
    last = np.full(N_INTERVALS, np.nan)
    last[idx] = price4  # ts_ns sorted, so the final write per bucket is the last trade
    filled = pd.Series(last).ffill().to_numpy()
    valid = ~np.isnan(filled)
    if valid.sum() < 2:
        return 0.0
    logp = np.log(filled[valid])
    return float(np.sqrt(np.sum(np.diff(logp) ** 2)))


def compute_returns(
    bars: pd.DataFrame,
    trades: pd.DataFrame,
    spy_ticker: str = "SPY",
) -> pd.DataFrame:
    """Per (symbol, day) return panel: raw_oc, excess, rv, dvol.

    raw_oc = ln(close/open); excess subtracts the same-day SPY raw_oc (unit
    market beta). rv and dvol come from the trade stream; symbol-days with a
    bar but no trades get rv = dvol = 0. Symbol-days without a bar are simply
    absent. Every day present must have a SPY bar.
    """
    bars = bars.copy()
    bars["raw_oc"] = np.log(bars["close"].to_numpy() / bars["open"].to_numpy())
    spy = bars[bars["ticker"] == spy_ticker].set_index("day")["raw_oc"]
    days = bars["day"].unique()
    missing_spy = sorted(set(days) - set(spy.index))
    if missing_spy:
        raise DataError(f"no {spy_ticker} bar for days: {missing_spy[:5]}")

    panel = bars.rename(columns={"ticker": "symbol"})[["symbol", "day", "raw_oc"]]
    panel["excess"] = panel["raw_oc"].to_numpy() - spy.loc[panel["day"]].to_numpy()

    if len(trades):
        rows = []
        for (sym, day), g in trades.groupby(["symbol", "day"], sort=True):
            ts = g["ts_ns"].to_numpy()
            rows.append(
                {
                    "symbol": sym,
                    "day": day,
                    "rv": realized_vol(ts, g["price4"].to_numpy()),
                    "dvol": float((g["size"].to_numpy() * g["price4"].to_numpy()).sum()) * 1e-4,
                }
            )
        intraday = pd.DataFrame(rows)
        panel = panel.merge(intraday, on=["symbol", "day"], how="left")
        panel[["rv", "dvol"]] = panel[["rv", "dvol"]].fillna(0.0)
    else:
        panel["rv"] = 0.0
        panel["dvol"] = 0.0
    return panel.sort_values(["symbol", "day"]).reset_index(drop=True)


_FACTOR_ALIASES = {
    "mkt-rf": "mkt", "mkt_rf": "mkt", "mkt": "mkt",
    "smb": "smb", "hml": "hml", "rmw": "rmw", "cma": "cma",
    "rf": "rf", "mom": "mom", "umd": "mom",
}


def _normalize_day(col: pd.Series) -> pd.Series:
    s = col.astype(str).str.strip()
    as_int = s.str.fullmatch(r"\d{8}")
    if as_int.all():
        return s.str.slice(0, 4) + "-" + s.str.slice(4, 6) + "-" + s.str.slice(6, 8)
    return s


def parse_factors(path, momentum_path=None) -> pd.DataFrame:
    """Daily factor file in the Kenneth French convention (percent units).

    Momentum may live in a separate file with the same date column. Output
    columns day,mkt,smb,hml,rmw,cma,mom,rf hold plain fractions.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"factor file not found: {path}")
    df = pd.read_csv(path, comment="#")
    if df.columns.str.fullmatch(r"[\d.\-\s]+").any():
        raise DataError(f"{path}: expected a header row, found numeric column names")
    df.columns = [c.strip().lower() for c in df.columns]
    date_col = df.columns[0]
    out = pd.DataFrame({"day": _normalize_day(df[date_col])})
    for c in df.columns[1:]:
        name = _FACTOR_ALIASES.get(c)
        if name:
            out[name] = pd.to_numeric(df[c], errors="raise") / 100.0
    if momentum_path is not None:
        mom = pd.read_csv(momentum_path, comment="#")
        mom.columns = [c.strip().lower() for c in mom.columns]
        mom_col = next((c for c in mom.columns[1:] if _FACTOR_ALIASES.get(c) == "mom"), mom.columns[1])
        mom_df = pd.DataFrame(
            {"day": _normalize_day(mom[mom.columns[0]]), "mom": pd.to_numeric(mom[mom_col]) / 100.0}
        )
        out = out.drop(columns=["mom"], errors="ignore").merge(mom_df, on="day", how="left")
    required = {"mkt", "smb", "hml", "rmw", "cma", "mom", "rf"}
    missing = required - set(out.columns)
    if missing:
        raise DataError(f"{path}: missing factor columns {sorted(missing)}")
    dup = out["day"].duplicated()
    if dup.any():
        raise DataError(f"{path}: duplicate date {out['day'][dup.idxmax()]}")
    if not np.isfinite(out[sorted(required)].to_numpy()).all():
        raise DataError(f"{path}: non-finite factor values")
    return out.sort_values("day").reset_index(drop=True)


def factors_for_days(factors: pd.DataFrame, days) -> pd.DataFrame:
    """Restrict the factor panel to the given days; all must be present."""
    days = sorted(set(days))
    have = set(factors["day"])
    missing = [d for d in days if d not in have]
    if missing:
        raise DataError(f"factor data missing for days: {missing[:5]}")
    return factors[factors["day"].isin(days)].reset_index(drop=True)
