"""Co-occurrence class probabilities under completely random (Poisson) arrivals.

Conditional on the interval counts, arrival times are i.i.d. uniform, so a
fixed trade sees each other trade inside its delta-neighbourhood with
probability p = 2*delta/T, independently across trades. The class
probabilities follow from the two independent "no own neighbour" / "no cross
neighbour" events.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .market_data import SymbolTable
from .util import DataError, INTERVAL_NS, substream_chunk

NULL_CLASSES = ("iso", "nis", "nis_s", "nis_c", "nis_b")


@dataclass
class ClassProbabilities:
    iso: float
    nis: float
    nis_s: float
    nis_c: float
    nis_b: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in NULL_CLASSES}


def _pow_1m(p: float, k) -> np.ndarray:
    """(1 - p)^k, stable for huge k; k may be an array of non-negative ints."""
    k = np.asarray(k, dtype=np.float64)
    if p >= 1.0:
        return np.where(k == 0, 1.0, 0.0)
    return np.exp(k * np.log1p(-p))


def class_probabilities(p: float, n_own: int, n_other: int) -> ClassProbabilities:
    """Class probabilities for one designated trade given counts and pair probability p."""
    if not 0.0 <= p <= 1.0:
        raise DataError(f"pair probability p={p} outside [0, 1]")
    if n_own < 1:
        raise DataError("n_own must be >= 1 (the designated trade exists)")
    q_own = float(_pow_1m(p, n_own - 1))     # no same-symbol neighbour
    q_cross = float(_pow_1m(p, n_other))     # no cross neighbour
    iso = q_own * q_cross
    return ClassProbabilities(
        iso=iso,
        nis=1.0 - iso,
        nis_s=(1.0 - q_own) * q_cross,
        nis_c=q_own * (1.0 - q_cross),
        nis_b=(1.0 - q_own) * (1.0 - q_cross),
    )


def pair_probability(delta_ns: int, interval_ns: int = INTERVAL_NS) -> float:
    if delta_ns < 1:
        raise DataError("delta_ns must be >= 1")
    if 2 * delta_ns > interval_ns:
        raise DataError(f"2*delta ({2 * delta_ns} ns) exceeds interval T ({interval_ns} ns)")
    return 2.0 * delta_ns / interval_ns


def null_probabilities(
    delta_ns: int, n_own: int, n_other: int, interval_ns: int = INTERVAL_NS
) -> ClassProbabilities:
    return class_probabilities(pair_probability(delta_ns, interval_ns), n_own, n_other)


def simulate_null(
    delta_ns: int,
    n_own: int,
    n_other: int,
    reps: int,
    seed: int,
    interval_ns: int = INTERVAL_NS,
) -> tuple[ClassProbabilities, dict]:
    """Monte Carlo of the random-arrival null for one designated trade.

    Draws the other arrival times uniformly and applies the labeling rules
    with wrap-around time distance, which removes interval-edge truncation and
    makes the analytic probabilities exact targets. Reps run in fixed-size
    chunks on counter-based RNG streams keyed by chunk index, so a given
    (seed, reps, counts) always reproduces byte-identical results no matter
    how the chunks are scheduled.
    """
    if reps < 1:
        raise DataError("reps must be >= 1")
    p = pair_probability(delta_ns, interval_ns)  # validates the delta/T domain
    if n_own < 1:
        raise DataError("n_own must be >= 1")
    T = float(interval_ns)
    delta = float(delta_ns)
    counts = np.zeros(4, dtype=np.int64)  # iso, nis_s, nis_c, nis_b
    per_rep = max(1, n_own - 1 + n_other)
    chunk_size = max(1, min(20_000, 5_000_000 // per_rep))
    done = 0
    chunk_idx = 0
    while done < reps:
        m = min(chunk_size, reps - done)
        rng = substream_chunk(seed, "null-mc", chunk_idx)
        t0 = rng.uniform(0.0, T, size=(m, 1))

        def any_hit(n: int) -> np.ndarray:
            if n == 0:
                return np.zeros(m, dtype=bool)
            u = rng.uniform(0.0, T, size=(m, n))
            d = np.abs(u - t0)
            d = np.minimum(d, T - d)
            return (d < delta).any(axis=1)

        s = any_hit(n_own - 1)
        c = any_hit(n_other)
        code = s.astype(np.int64) + 2 * c.astype(np.int64)
        counts += np.bincount(code, minlength=4)
        done += m
        chunk_idx += 1

    frac = counts / reps
    probs = ClassProbabilities(
        iso=frac[0], nis=1.0 - frac[0], nis_s=frac[1], nis_c=frac[2], nis_b=frac[3]
    )
    se = {k: float(np.sqrt(v * (1.0 - v) / reps)) for k, v in probs.as_dict().items()}
    return probs, se


# ---------------------------------------------------------------------------
# Data-driven profiles and neighbourhood-size selection
# ---------------------------------------------------------------------------


def interval_null_profile(
    intervals: pd.DataFrame,
    delta_ns: int,
    table: SymbolTable,
    interval_ns: int = INTERVAL_NS,
) -> pd.DataFrame:
    """Daily null class probabilities per (symbol, day).

    `intervals` holds per (symbol, day, interval) trade totals. Each interval
    is evaluated with its own counts and the results are averaged with the
    symbol's interval trade shares as weights; empty intervals carry no
    weight. Only universe symbols are profiled; market-set symbols contribute
    to the cross counts.
    """
    p = pair_probability(delta_ns, interval_ns)
    universe = set(np.array(table.tickers)[table.universe_mask])
    market = set(np.array(table.tickers)[table.market_mask])
    rows = []
    for day, day_iv in intervals.groupby("day", sort=True):
        pivot = day_iv.pivot_table(
            index="symbol", columns="interval", values="count", aggfunc="sum", fill_value=0
        )
        mkt_rows = [s for s in pivot.index if s in market]
        mkt_total = pivot.loc[mkt_rows].sum(axis=0).to_numpy(dtype=np.int64) if mkt_rows else 0
        for sym in sorted(set(pivot.index) & universe):
            own = pivot.loc[sym].to_numpy(dtype=np.int64)
            other = mkt_total - own if sym in market else np.broadcast_to(mkt_total, own.shape)
            active = own > 0
            if not active.any():
                continue
            w = own[active] / own[active].sum()
            q_own = _pow_1m(p, own[active] - 1)
            q_cross = _pow_1m(p, other[active])
            iso = float(np.sum(w * q_own * q_cross))
            nis_s = float(np.sum(w * (1.0 - q_own) * q_cross))
            nis_c = float(np.sum(w * q_own * (1.0 - q_cross)))
            nis_b = float(np.sum(w * (1.0 - q_own) * (1.0 - q_cross)))
            rows.append((sym, day, iso, 1.0 - iso, nis_s, nis_c, nis_b))
    return pd.DataFrame(rows, columns=["symbol", "day", *NULL_CLASSES])


def empirical_fractions(counts: pd.DataFrame, window: str = "full") -> pd.DataFrame:
    """Per (symbol, day) empirical class fractions from a label-count table.

    Symbol-days with zero trades are dropped (no fractions to speak of).
    """
    sub = counts[counts["window"] == window].copy()
    sub["n"] = sub["buy_count"] + sub["sell_count"]
    pivot = sub.pivot_table(index=["symbol", "day"], columns="type", values="n", aggfunc="sum")
    pivot = pivot[pivot["all"] > 0]
    out = pd.DataFrame(index=pivot.index)
    for cls in NULL_CLASSES:
        out[cls] = pivot[cls] / pivot["all"]
    return out.reset_index()


def weighted_distance(emp: pd.DataFrame, null: pd.DataFrame) -> float:
    """Mean over (symbol, day) cells of the weighted average gap |emp - null|.

    Weights are the empirical fractions of the five classes, normalized per
    cell so a uniform per-class gap of g yields a distance of exactly g.
    """
    merged = emp.merge(null, on=["symbol", "day"], suffixes=("_emp", "_null"))
    if merged.empty:
        raise DataError("no (symbol, day) cells shared between empirical and null tables")
    w = merged[[f"{c}_emp" for c in NULL_CLASSES]].to_numpy()
    gap = np.abs(w - merged[[f"{c}_null" for c in NULL_CLASSES]].to_numpy())
    wsum = w.sum(axis=1)
    cell = np.where(wsum > 0, (w * gap).sum(axis=1) / np.where(wsum > 0, wsum, 1.0), 0.0)
    return float(cell.mean())


def select_delta(
    emp_by_delta: dict, null_by_delta: dict, deltas: list[int]
) -> tuple[int, dict]:
    """Pick the neighbourhood size whose empirical class mix strays furthest
    from the random-arrival null; ties resolve to the smaller delta."""
    distances = {}
    for d in deltas:
        distances[int(d)] = weighted_distance(emp_by_delta[d], null_by_delta[d])
    best = max(sorted(distances), key=lambda d: distances[d])
    # max() keeps the first of equal values; sorted() makes that the smallest delta
    return best, distances
