"""Conditional order imbalances and their descriptive statistics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .util import COI_TYPES, DataError

COI_COLUMNS = ["symbol", "day", "window", "measure", "type", "value"]


def compute_coi(counts: pd.DataFrame, measure: str = "count", window: str = "full") -> pd.DataFrame:
    """Per (symbol, day) imbalance (buy - sell) / (buy + sell) for each trade type.

    A type with no trades has imbalance 0 by convention, so the output is
    total on the count table's (symbol, day) grid. `measure` selects trade
    counts or share volumes.
    """
    if measure not in ("count", "volume"):
        raise DataError(f"measure must be 'count' or 'volume', got {measure!r}")
    sub = counts[counts["window"] == window]
    if sub.empty:
        raise DataError(f"count table has no rows for window {window!r}")
    buy = sub[f"buy_{measure}"].to_numpy(dtype=np.float64)
    sell = sub[f"sell_{measure}"].to_numpy(dtype=np.float64)
    denom = buy + sell
    value = np.where(denom > 0, (buy - sell) / np.where(denom > 0, denom, 1.0), 0.0)
    out = sub[["symbol", "day", "window", "type"]].copy()
    out["measure"] = measure
    out["value"] = value
    return out[COI_COLUMNS].reset_index(drop=True)


def coi_wide(coi: pd.DataFrame, measure: str = "count", window: str = "full") -> pd.DataFrame:
    """Pivot a COI table to one row per (symbol, day) with coi_<type> columns."""
    sub = coi[(coi["measure"] == measure) & (coi["window"] == window)]
    wide = sub.pivot_table(index=["symbol", "day"], columns="type", values="value")
    wide = wide.rename(columns={t: f"coi_{t}" for t in wide.columns})
    return wide.reset_index()


def pacf_ols(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Partial autocorrelations: coefficient on lag k when regressing on lags 1..k."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    out = np.full(max_lag, np.nan)
    for k in range(1, max_lag + 1):
        if n < k + 2:
            break
        y = x[k:]
        X = np.column_stack([np.ones(n - k)] + [x[k - j : n - j] for j in range(1, k + 1)])
        beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
        if rank < X.shape[1]:
            continue  # constant or degenerate series: leave nan
        out[k - 1] = beta[-1]
    return out


@dataclass
class CoiStats:
    summary: pd.DataFrame          # rows per type: mean, median, std over (symbol, day)
    pacf: pd.DataFrame             # rows per type: lag_1 .. lag_K, averaged over symbols
    correlation: np.ndarray        # len(COI_TYPES) x len(COI_TYPES), averaged over symbols
    corr_symbols: int              # symbols entering the correlation average

    def as_dict(self) -> dict:
        return {
            "summary": {
                r["type"]: {"mean": r["mean"], "median": r["median"], "std": r["std"]}
                for _, r in self.summary.iterrows()
            },
            "pacf": {
                r["type"]: [r[c] for c in self.pacf.columns if c.startswith("lag_")]
                for _, r in self.pacf.iterrows()
            },
            "correlation": {
                "types": list(COI_TYPES),
                "matrix": self.correlation.tolist(),
                "n_symbols": self.corr_symbols,
            },
        }


def coi_stats(coi: pd.DataFrame, measure: str = "count", window: str = "full", lags: int = 5) -> CoiStats:
    """Cross-sectional summary, per-symbol PACF averages, and the averaged
    Pearson correlation matrix of the six imbalance series.

    Symbols whose series are constant have undefined correlations and are
    excluded from the correlation average.
    """
    wide = coi_wide(coi, measure, window)
    cols = [f"coi_{t}" for t in COI_TYPES]
    missing = [c for c in cols if c not in wide.columns]
    if missing:
        raise DataError(f"COI table lacks types: {missing}")
    short = wide.groupby("symbol").size()
    too_short = short[short < lags + 1]
    if len(too_short):
        raise DataError(
            f"need >= {lags + 1} observations per symbol for lag-{lags} PACF; "
            f"short: {sorted(too_short.index)[:5]}"
        )

    summary = pd.DataFrame(
        {
            "type": list(COI_TYPES),
            "mean": [wide[c].mean() for c in cols],
            "median": [wide[c].median() for c in cols],
            "std": [wide[c].std(ddof=1) for c in cols],
        }
    )

    pacf_rows = []
    mats = []
    for sym, g in wide.sort_values(["symbol", "day"]).groupby("symbol", sort=True):
        series = g[cols].to_numpy()
        pacf_rows.append([pacf_ols(series[:, j], lags) for j in range(len(cols))])
        if np.ptp(series, axis=0).min() > 0:
            mats.append(np.corrcoef(series.T))
    pacf_arr = np.array(pacf_rows)  # (symbols, types, lags)
    with warnings.catch_warnings():
        # all-nan slices (a type constant for every symbol) mean "no estimate"
        warnings.simplefilter("ignore", RuntimeWarning)
        pacf_mean = np.nanmean(pacf_arr, axis=0)
    pacf_df = pd.DataFrame(pacf_mean, columns=[f"lag_{k}" for k in range(1, lags + 1)])
    pacf_df.insert(0, "type", list(COI_TYPES))

    if not mats:
        raise DataError("every symbol has at least one constant imbalance series; "
                        "correlation matrix undefined")
    corr = np.mean(mats, axis=0)
    corr = (corr + corr.T) / 2.0
    np.fill_diagonal(corr, 1.0)
    return CoiStats(summary=summary, pacf=pacf_df, correlation=corr, corr_symbols=len(mats))
