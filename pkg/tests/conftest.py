import numpy as np
import pandas as pd
import pytest

from tradeflow.util import SESSION_CLOSE_NS, SESSION_OPEN_NS


def make_trades(rows):
    """rows: (symbol, day, ts_ns, dir, size, price4) tuples."""
    return pd.DataFrame(
        rows, columns=["symbol", "day", "ts_ns", "dir", "size", "price4"]
    ).astype({"ts_ns": np.int64, "dir": np.int8, "size": np.int64, "price4": np.int64})


def random_day_times(rng, n_symbols, total_trades, span_ns=None, base_ns=SESSION_OPEN_NS):
    """Random strictly-sorted per-symbol timestamp arrays for one day."""
    span_ns = span_ns or (SESSION_CLOSE_NS - SESSION_OPEN_NS)
    owners = rng.integers(0, n_symbols, size=total_trades)
    ts = rng.integers(base_ns, base_ns + span_ns, size=total_trades, dtype=np.int64)
    times = {}
    for s in range(n_symbols):
        times[f"S{s:02d}"] = np.unique(ts[owners == s])
    return times


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
