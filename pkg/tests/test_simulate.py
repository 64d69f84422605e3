import numpy as np
import pandas as pd
import pytest

from tradeflow import market_data as md
from tradeflow.simulate import SimParams, generate_market
from tradeflow.util import SESSION_CLOSE_NS, SESSION_OPEN_NS

SMALL = SimParams(n_symbols=5, n_days=6, trades_per_day=80.0, delta_ns=10**9)


class TestGenerateMarket:
    def test_seed_determinism(self):
        a = generate_market(SMALL, seed=3)
        b = generate_market(SMALL, seed=3)
        for key in ("trades", "bars", "factors", "truth"):
            pd.testing.assert_frame_equal(a[key], b[key])
        c = generate_market(SMALL, seed=4)
        assert not a["trades"].equals(c["trades"])

    def test_trade_invariants(self):
        data = generate_market(SMALL, seed=1)
        t = data["trades"]
        assert (t["size"] >= 1).all() and (t["price4"] >= 1).all()
        assert t["ts_ns"].between(SESSION_OPEN_NS, SESSION_CLOSE_NS).all()
        for _, g in t.groupby(["symbol", "day"]):
            assert (np.diff(g["ts_ns"].to_numpy()) > 0).all()

    def test_bars_consistent_with_planted_returns(self):
        data = generate_market(SMALL, seed=2)
        bars = data["bars"]
        panel = md.compute_returns(bars, data["trades"], spy_ticker=SMALL.spy)
        spy = panel[panel["symbol"] == SMALL.spy]
        assert (spy["excess"] == 0.0).all()
        # opens chain onto previous closes, so close-to-close returns exist
        one = bars[bars["ticker"] == "S00"].sort_values("day")
        np.testing.assert_allclose(
            one["open"].to_numpy()[1:], one["close"].to_numpy()[:-1]
        )

    def test_iso_bias_moves_imbalance(self):
        # strong bias, huge delta: every trade is non-iso -> bias never applies;
        # tiny delta: every trade iso -> imbalance tracks theta
        params = SimParams(n_symbols=3, n_days=3, trades_per_day=400.0,
                           delta_ns=1, theta_max=0.9)
        data = generate_market(params, seed=9)
        trades = data["trades"].merge(data["truth"], on=["symbol", "day"])
        for (sym, day), g in trades.groupby(["symbol", "day"]):
            theta = g["theta"].iloc[0]
            coi = g["dir"].mean()
            assert abs(coi - theta) < 5.0 / np.sqrt(len(g))

    def test_factor_file_parses_with_market_loader(self, tmp_path):
        data = generate_market(SMALL, seed=5)
        p = tmp_path / "factors.csv"
        data["factors"].to_csv(p, index=False)
        parsed = md.parse_factors(p)
        assert parsed["rf"].iloc[0] == pytest.approx(SMALL.rf_daily)
        np.testing.assert_allclose(
            parsed["mkt"].to_numpy(), data["factors"]["mkt_rf"].to_numpy() / 100.0
        )
