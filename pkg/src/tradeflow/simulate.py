"""Synthetic market generator.

Trade arrivals are independent homogeneous Poisson streams per symbol-day, so
the co-occurrence mix matches the random-arrival null by construction. An
optional planted signal ties each symbol's next-day excess return to a latent
daily direction bias that only the isolated trades express, which gives the
downstream regression and backtest stages a known ground truth to recover.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd

from .cooccurrence import ISO, classify_day
from .market_data import SymbolTable
from .util import (
    SESSION_CLOSE_NS,
    SESSION_OPEN_NS,
    SESSION_SPAN_NS,
    substream,
    substream_chunk,
)


@dataclass
class SimParams:
    n_symbols: int = 20
    n_days: int = 60
    trades_per_day: float = 400.0
    delta_ns: int = 500_000_000      # neighbourhood used for the planted labels
    iso_coef: float = 0.01           # next-day excess return per unit of iso bias
    noise_sd: float = 0.008
    market_vol: float = 0.008
    theta_max: float = 0.6           # daily direction bias ~ U(-theta_max, theta_max)
    start_day: str = "2021-01-04"
    spy: str = "SPY"
    mean_size: float = 100.0
    rf_daily: float = 0.0000625

    def as_dict(self) -> dict:
        return asdict(self)


def sim_tickers(n: int) -> list[str]:
    return [f"S{i:02d}" for i in range(n)]


def generate_market(params: SimParams, seed: int) -> dict:
    """Build a full synthetic market: trades, daily bars (incl. the market
    proxy), a factor file in percent units, and the planted truth panel."""
    symbols = sim_tickers(params.n_symbols)
    days = [d.strftime("%Y-%m-%d") for d in pd.bdate_range(params.start_day, periods=params.n_days)]
    n_sym, n_days = len(symbols), len(days)

    theta = substream(seed, "theta").uniform(-params.theta_max, params.theta_max, (n_days, n_sym))
    market_ret = substream(seed, "market").normal(0.0, params.market_vol, n_days)
    eps = substream(seed, "noise").normal(0.0, params.noise_sd, (n_days, n_sym))
    excess = eps.copy()
    excess[1:] += params.iso_coef * theta[:-1]
    raw = excess + market_ret[:, None]

    open_px = np.empty((n_days, n_sym))
    open_px[0] = substream(seed, "base-price").uniform(20.0, 200.0, n_sym)
    for t in range(1, n_days):
        open_px[t] = open_px[t - 1] * np.exp(raw[t - 1])
    close_px = open_px * np.exp(raw)

    spy_open = np.empty(n_days)
    spy_open[0] = 300.0
    for t in range(1, n_days):
        spy_open[t] = spy_open[t - 1] * np.exp(market_ret[t - 1])
    spy_close = spy_open * np.exp(market_ret)

    bar_rows = []
    for t, day in enumerate(days):
        for i, sym in enumerate(symbols):
            bar_rows.append((day, sym, open_px[t, i], close_px[t, i]))
        bar_rows.append((day, params.spy, spy_open[t], spy_close[t]))
    bars = pd.DataFrame(bar_rows, columns=["day", "ticker", "open", "close"])

    factor_rng = substream(seed, "factors")
    factors = pd.DataFrame(
        {
            "day": days,
            "mkt_rf": (market_ret - params.rf_daily) * 100.0,
            "smb": factor_rng.normal(0.0, 0.2, n_days),
            "hml": factor_rng.normal(0.0, 0.2, n_days),
            "rmw": factor_rng.normal(0.0, 0.2, n_days),
            "cma": factor_rng.normal(0.0, 0.2, n_days),
            "mom": factor_rng.normal(0.0, 0.3, n_days),
            "rf": np.full(n_days, params.rf_daily * 100.0),
        }
    )

    trade_frames = []
    for t, day in enumerate(days):
        times = {}
        for i, sym in enumerate(symbols):
            rng = substream_chunk(seed, "arrivals", t * n_sym + i)
            n = rng.poisson(params.trades_per_day)
            ts = np.unique(rng.integers(SESSION_OPEN_NS, SESSION_CLOSE_NS + 1, size=n, dtype=np.int64))
            times[sym] = ts
        labels = classify_day(times, params.delta_ns, market=set(symbols))
        for i, sym in enumerate(symbols):
            ts = times[sym]
            if len(ts) == 0:
                continue
            rng = substream_chunk(seed, "fills", t * n_sym + i)
            p_buy = np.where(labels[sym] == ISO, (1.0 + theta[t, i]) / 2.0, 0.5)
            direction = np.where(rng.random(len(ts)) < p_buy, 1, -1).astype(np.int8)
            size = np.maximum(1, rng.poisson(params.mean_size, len(ts))).astype(np.int64)
            frac = (ts - SESSION_OPEN_NS) / SESSION_SPAN_NS
            logp = np.log(open_px[t, i]) + frac * raw[t, i] + rng.normal(0.0, 2e-4, len(ts))
            price4 = np.maximum(1, np.rint(np.exp(logp) * 1e4)).astype(np.int64)
            trade_frames.append(
                pd.DataFrame(
                    {
                        "symbol": sym,
                        "day": day,
                        "ts_ns": ts,
                        "dir": direction,
                        "size": size,
                        "price4": price4,
                    }
                )
            )
    trades = pd.concat(trade_frames, ignore_index=True)
    trades = trades.sort_values(["symbol", "day", "ts_ns"], kind="stable").reset_index(drop=True)

    truth = pd.DataFrame(
        [(days[t], symbols[i], theta[t, i]) for t in range(n_days) for i in range(n_sym)],
        columns=["day", "symbol", "theta"],
    )
    return {
        "trades": trades,
        "bars": bars,
        "factors": factors,
        "truth": truth,
        "table": SymbolTable.from_lists(symbols),
        "days": days,
        "symbols": symbols,
    }
