"""Co-occurrence labeling of trades.

Every trade of a universe symbol gets exactly one of four classes depending on
which neighbours fall strictly within `delta_ns` of its timestamp (open
interval, so a gap of exactly delta does not co-occur):

    iso    no neighbour at all
    nis_s  same-symbol neighbours only
    nis_c  neighbours only among other market-set symbols
    nis_b  both kinds

"nis" is the union of the last three and is never stored. Trades of symbols in
the market set but outside the universe serve as neighbours and are not
labeled themselves.
"""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .market_data import SymbolTable
from .util import (
    DataError,
    INTERVAL_NS,
    N_INTERVALS,
    SESSION_CLOSE_NS,
    SESSION_OPEN_NS,
    DEFAULT_WINDOWS,
    parse_window,
)

ISO, NIS_S, NIS_C, NIS_B = 0, 1, 2, 3
CLASS_NAMES = ("iso", "nis_s", "nis_c", "nis_b")

MAX_DELTA_NS = 10**18
BRUTEFORCE_MAX_TRADES = 100_000


def _validate_delta(delta_ns: int) -> int:
    delta_ns = int(delta_ns)
    if not 1 <= delta_ns <= MAX_DELTA_NS:
        raise DataError(f"delta_ns must be in [1, {MAX_DELTA_NS}], got {delta_ns}")
    return delta_ns


def _validate_times(times_by_symbol: Mapping) -> None:
    for key, t in times_by_symbol.items():
        t = np.asarray(t)
        if t.ndim != 1:
            raise DataError(f"times of {key!r} must be 1-d")
        if len(t) > 1 and not (np.diff(t) > 0).all():
            raise DataError(f"times of {key!r} not strictly increasing")


def _window_flags(t: np.ndarray, sorted_times: np.ndarray, delta_ns: int) -> np.ndarray:
    """Number of events of `sorted_times` strictly within delta of each t."""
    lo = np.searchsorted(sorted_times, t - delta_ns + 1, side="left")
    hi = np.searchsorted(sorted_times, t + delta_ns - 1, side="right")
    return hi - lo


def _label_symbol(
    t: np.ndarray,
    market_times: np.ndarray,
    delta_ns: int,
    in_market: bool,
    time_partitions: int = 1,
) -> np.ndarray:
    n = len(t)
    if n == 0:
        return np.empty(0, dtype=np.int8)
    chunks = [t] if time_partitions <= 1 else np.array_split(t, time_partitions)
    out = []
    for chunk in chunks:
        if len(chunk) == 0:
            continue
        own = _window_flags(chunk, t, delta_ns)  # includes the trade itself
        s = own >= 2
        mkt = _window_flags(chunk, market_times, delta_ns)
        cross = mkt - own if in_market else mkt
        c = cross > 0
        out.append((s.astype(np.int8) + 2 * c.astype(np.int8)))
    return np.concatenate(out) if out else np.empty(0, dtype=np.int8)


def classify_day(
    times_by_symbol: Mapping,
    delta_ns: int,
    market: Iterable,
    universe: Iterable | None = None,
    time_partitions: int = 1,
) -> dict:
    """Label one day's trades; returns {symbol: int8 class codes}.

    `times_by_symbol` maps symbol -> strictly increasing int64 nanosecond
    timestamps. Only symbols in `universe` (default: all keys) are labeled;
    symbols in `market` additionally act as cross neighbours.
    """
    results = sweep_delta(times_by_symbol, [delta_ns], market, universe, time_partitions)
    return results[int(delta_ns)]


def sweep_delta(
    times_by_symbol: Mapping,
    deltas: Iterable[int],
    market: Iterable,
    universe: Iterable | None = None,
    time_partitions: int = 1,
) -> dict:
    """classify_day over an ascending delta grid, sharing the merged sort.

    Returns {delta_ns: {symbol: labels}}.
    """
    deltas = [_validate_delta(d) for d in deltas]
    if any(b <= a for a, b in zip(deltas, deltas[1:])):
        raise DataError("deltas must be strictly ascending")
    _validate_times(times_by_symbol)
    market = set(market)
    if universe is None:
        universe = set(times_by_symbol)
    labeled = sorted(set(universe) & set(times_by_symbol))

    arrays = {k: np.asarray(v, dtype=np.int64) for k, v in times_by_symbol.items()}
    mkt_arrays = [arrays[k] for k in sorted(market & set(arrays))]
    market_times = np.sort(np.concatenate(mkt_arrays)) if mkt_arrays else np.empty(0, np.int64)

    out: dict = {}
    for delta in deltas:
        out[delta] = {
            k: _label_symbol(arrays[k], market_times, delta, k in market, time_partitions)
            for k in labeled
        }
    return out


def classify_day_bruteforce(
    times_by_symbol: Mapping,
    delta_ns: int,
    market: Iterable,
    universe: Iterable | None = None,
    max_trades: int = BRUTEFORCE_MAX_TRADES,
    block: int = 256,
) -> dict:
    """Quadratic reference labeler: checks |t_a - t_b| < delta for every pair.

    Exists as an independent oracle for classify_day; refuses instances above
    `max_trades` to guard against runaway O(N^2) work.
    """
    delta_ns = _validate_delta(delta_ns)
    _validate_times(times_by_symbol)
    market = set(market)
    if universe is None:
        universe = set(times_by_symbol)
    labeled = sorted(set(universe) & set(times_by_symbol))

    keys = sorted(times_by_symbol)
    total = sum(len(times_by_symbol[k]) for k in keys)
    if total > max_trades:
        raise DataError(f"brute-force refused: {total} trades > {max_trades}")

    t_all = np.concatenate([np.asarray(times_by_symbol[k], dtype=np.int64) for k in keys]) \
        if keys else np.empty(0, np.int64)
    code_of = {k: i for i, k in enumerate(keys)}
    sym_all = np.concatenate(
        [np.full(len(times_by_symbol[k]), code_of[k], dtype=np.int64) for k in keys]
    ) if keys else np.empty(0, np.int64)
    offsets = {}
    pos = 0
    for k in keys:
        offsets[k] = pos
        pos += len(times_by_symbol[k])
    in_market = np.array([k in market for k in keys])

    out = {}
    for k in labeled:
        t_i = np.asarray(times_by_symbol[k], dtype=np.int64)
        n = len(t_i)
        labels = np.empty(n, dtype=np.int8)
        same_mask = sym_all == code_of[k]
        cross_mask = in_market[sym_all] & ~same_mask
        for a in range(0, n, block):
            b = min(a + block, n)
            near = np.abs(t_i[a:b, None] - t_all[None, :]) < delta_ns
            rows = np.arange(a, b)
            near[rows - a, offsets[k] + rows] = False  # a trade is not its own neighbour
            s = (near & same_mask).any(axis=1)
            c = (near & cross_mask).any(axis=1)
            labels[a:b] = s.astype(np.int8) + 2 * c.astype(np.int8)
        out[k] = labels
    return out


# ---------------------------------------------------------------------------
# DataFrame front end and count aggregation
# ---------------------------------------------------------------------------

COUNT_TYPES = ("all", "iso", "nis", "nis_s", "nis_c", "nis_b")
COUNT_COLUMNS = [
    "symbol", "day", "window", "type",
    "buy_count", "sell_count", "buy_volume", "sell_volume",
]


def sweep_trades(
    trades: pd.DataFrame,
    table: SymbolTable,
    deltas: Iterable[int],
    time_partitions: int = 1,
    threads: int = 1,
) -> dict[int, pd.DataFrame]:
    """Label a canonical trade table for each delta in an ascending grid.

    Days are independent and processed in parallel when `threads` > 1; the
    merge is ordered by day so the result never depends on thread count.
    Returns {delta_ns: labeled DataFrame of the universe symbols' trades}.
    """
    deltas = [int(d) for d in deltas]
    relevant = set(np.array(table.tickers)[table.universe_mask | table.market_mask])
    universe = set(np.array(table.tickers)[table.universe_mask])
    market = set(np.array(table.tickers)[table.market_mask])

    def one_day(day_trades: pd.DataFrame) -> dict[int, pd.DataFrame]:
        groups = {sym: g for sym, g in day_trades.groupby("symbol", sort=True)}
        times = {sym: g["ts_ns"].to_numpy() for sym, g in groups.items()}
        per_delta = sweep_delta(times, deltas, market, universe, time_partitions)
        out = {}
        for delta, labels in per_delta.items():
            pieces = []
            for sym in sorted(labels):
                piece = groups[sym][["symbol", "day", "ts_ns", "dir", "size"]].copy()
                piece["class"] = np.array(CLASS_NAMES)[labels[sym]]
                pieces.append(piece)
            out[delta] = pd.concat(pieces, ignore_index=True) if pieces else None
        return out

    day_frames = [g for _, g in trades[trades["symbol"].isin(relevant)].groupby("day", sort=True)]
    if threads > 1 and len(day_frames) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            day_results = list(pool.map(one_day, day_frames))
    else:
        day_results = [one_day(g) for g in day_frames]

    empty = pd.DataFrame(columns=["symbol", "day", "ts_ns", "dir", "size", "class"])
    out = {}
    for delta in deltas:
        pieces = [r[delta] for r in day_results if r[delta] is not None]
        if pieces:
            df = pd.concat(pieces, ignore_index=True)
            df = df.sort_values(["symbol", "day", "ts_ns"], kind="stable").reset_index(drop=True)
        else:
            df = empty.copy()
        out[delta] = df
    return out


def classify_trades(
    trades: pd.DataFrame,
    table: SymbolTable,
    delta_ns: int,
    time_partitions: int = 1,
) -> pd.DataFrame:
    """Label a canonical trade table (any number of days) at one delta.

    Returns the universe symbols' rows with a `class` column; market-only
    symbols contribute neighbours but no output rows.
    """
    return sweep_trades(trades, table, [delta_ns], time_partitions)[int(delta_ns)]


def _window_mask(ts: np.ndarray, start_ns: int, end_ns: int) -> np.ndarray:
    # Half-open windows except at the session close, which is inclusive so the
    # final print belongs to the last window.
    if end_ns >= SESSION_CLOSE_NS:
        return (ts >= start_ns) & (ts <= SESSION_CLOSE_NS)
    return (ts >= start_ns) & (ts < end_ns)


def label_counts(
    labels: pd.DataFrame,
    universe: Iterable[str],
    windows: Iterable[str] = DEFAULT_WINDOWS,
) -> pd.DataFrame:
    """Aggregate labeled trades to per (symbol, day, window, type) buy/sell tallies.

    Universe symbols with no trades on a day present in `labels` still get
    zero-count rows, so downstream panels stay rectangular.
    """
    windows = list(windows)
    universe = sorted(set(universe))
    days = sorted(labels["day"].unique()) if len(labels) else []
    value_cols = ["buy_count", "sell_count", "buy_volume", "sell_volume"]
    if not days:
        return pd.DataFrame(columns=COUNT_COLUMNS)

    is_buy = labels["dir"].to_numpy() > 0
    base = labels.assign(
        buy_count=is_buy.astype(np.int64),
        sell_count=(~is_buy).astype(np.int64),
        buy_volume=np.where(is_buy, labels["size"], 0).astype(np.int64),
        sell_volume=np.where(is_buy, 0, labels["size"]).astype(np.int64),
    )
    full_index = pd.MultiIndex.from_product(
        [universe, days, CLASS_NAMES], names=["symbol", "day", "class"]
    )
    pieces = []
    for w in windows:
        start, end = parse_window(w)
        sub = base[_window_mask(base["ts_ns"].to_numpy(), start, end)]
        agg = (
            sub.groupby(["symbol", "day", "class"], sort=True)[value_cols]
            .sum()
            .reindex(full_index, fill_value=0)
            .reset_index()
        )
        nis = (
            agg[agg["class"] != "iso"]
            .groupby(["symbol", "day"], sort=True)[value_cols]
            .sum()
            .reset_index()
            .assign(**{"class": "nis"})
        )
        total = (
            agg.groupby(["symbol", "day"], sort=True)[value_cols]
            .sum()
            .reset_index()
            .assign(**{"class": "all"})
        )
        piece = pd.concat([total, agg, nis], ignore_index=True)
        piece["window"] = w
        pieces.append(piece)
    out = pd.concat(pieces, ignore_index=True).rename(columns={"class": "type"})
    out["type"] = pd.Categorical(out["type"], categories=COUNT_TYPES, ordered=True)
    out = out.sort_values(["symbol", "day", "window", "type"]).reset_index(drop=True)
    out["type"] = out["type"].astype(str)
    return out[COUNT_COLUMNS]


def interval_counts(trades: pd.DataFrame, table: SymbolTable) -> pd.DataFrame:
    """Per (symbol, day, 5-minute interval) trade totals for the null model.

    Includes every market-set or universe symbol; intervals with zero trades
    are omitted. The 16:00:00 print is folded into the last interval.
    """
    relevant = set(np.array(table.tickers)[table.universe_mask | table.market_mask])
    sub = trades[trades["symbol"].isin(relevant)]
    if sub.empty:
        return pd.DataFrame(columns=["symbol", "day", "interval", "count"])
    interval = np.minimum(
        (sub["ts_ns"].to_numpy() - SESSION_OPEN_NS) // INTERVAL_NS, N_INTERVALS - 1
    )
    out = (
        sub.assign(interval=interval)
        .groupby(["symbol", "day", "interval"], sort=True)
        .size()
        .rename("count")
        .reset_index()
    )
    return out
