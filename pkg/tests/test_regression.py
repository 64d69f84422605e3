import numpy as np
import pandas as pd
import pytest

from tradeflow.regression import (
    DesignSpec,
    FACTOR_COLS,
    alpha_regression,
    build_panel,
    nw_auto_lags,
    ols_fit,
    run_contemporaneous,
    run_per_symbol,
    run_predictive,
    run_subperiods,
)
from tradeflow.util import COI_TYPES, DataError, NumericalError


def normal_equation_oracle(X, y):
    """Independent reference solve: beta = (X'X)^-1 X'y with an intercept."""
    Xc = np.column_stack([np.ones(len(y)), X])
    return np.linalg.inv(Xc.T @ Xc) @ (Xc.T @ y)


def white_cov_oracle(X, y):
    Xc = np.column_stack([np.ones(len(y)), X])
    beta = np.linalg.inv(Xc.T @ Xc) @ (Xc.T @ y)
    e = y - Xc @ beta
    bread = np.linalg.inv(Xc.T @ Xc)
    meat = (Xc * (e**2)[:, None]).T @ Xc
    return bread @ meat @ bread


class TestOlsFit:
    def test_exact_line(self):
        x = np.arange(10.0)
        y = 2.0 * x + 1.0
        res = ols_fit(x, y, names=["x"])
        assert res.coef == pytest.approx([1.0, 2.0], abs=1e-10)
        assert res.r2 == pytest.approx(1.0)
        assert res.mse == pytest.approx(0.0, abs=1e-20)

    def test_matches_normal_equations(self, rng):
        for _ in range(30):
            n = int(rng.integers(20, 200))
            k = int(rng.integers(1, 6))
            X = rng.normal(size=(n, k))
            y = rng.normal(size=n)
            res = ols_fit(X, y)
            oracle = normal_equation_oracle(X, y)
            np.testing.assert_allclose(res.coef, oracle, rtol=1e-10)

    def test_hac_zero_equals_white(self, rng):
        n = 150
        X = rng.normal(size=(n, 3))
        y = rng.normal(size=n) * (1 + np.abs(X[:, 0]))  # heteroskedastic
        res = ols_fit(X, y, hac_lags=0)
        cov = white_cov_oracle(X, y)
        se = np.sqrt(np.diag(cov))
        np.testing.assert_allclose(res.tstat, res.coef / se, rtol=1e-12)

    def test_rank_deficiency_names_columns(self, rng):
        X = rng.normal(size=(50, 2))
        X = np.column_stack([X, X[:, 0] + X[:, 1]])
        with pytest.raises(NumericalError, match="collinear"):
            ols_fit(X, rng.normal(size=50), names=["a", "b", "a_plus_b"])

    def test_more_params_than_rows(self, rng):
        with pytest.raises(DataError, match="observations"):
            ols_fit(rng.normal(size=(4, 5)), rng.normal(size=4))

    def test_response_rescaling(self, rng):
        n = 300
        X = rng.normal(size=(n, 2))
        y = 0.5 * X[:, 0] + rng.normal(size=n)
        a = ols_fit(X, y)
        b = ols_fit(X, 100.0 * y)
        np.testing.assert_allclose(b.coef, 100.0 * a.coef, rtol=1e-10)
        np.testing.assert_allclose(b.tstat, a.tstat, rtol=1e-10)
        assert b.r2 == pytest.approx(a.r2, rel=1e-12)
        assert b.adj_r2 == pytest.approx(a.adj_r2, rel=1e-12)

    def test_r2_nondecreasing_with_columns(self, rng):
        n = 200
        X = rng.normal(size=(n, 2))
        y = X[:, 0] + rng.normal(size=n)
        r_small = ols_fit(X[:, :1], y).r2
        r_big = ols_fit(np.column_stack([X, rng.normal(size=n)]), y).r2
        assert r_big >= r_small - 1e-12
        # adjusted R2 must stay below the raw one
        res = ols_fit(X, y)
        assert res.adj_r2 <= res.r2

    def test_hac_close_to_classical_on_iid(self, rng):
        n = 4000
        X = rng.normal(size=(n, 2))
        y = 0.3 * X[:, 0] + rng.normal(size=n)
        classical = ols_fit(X, y)
        hac = ols_fit(X, y, hac_lags=nw_auto_lags(n))
        np.testing.assert_allclose(hac.tstat[1:], classical.tstat[1:], rtol=0.1)

    def test_diagnostics_populated(self, rng):
        n = 100
        X = rng.normal(size=(n, 2))
        y = X[:, 0] + rng.normal(size=n)
        res = ols_fit(X, y)
        assert res.nobs == n
        assert np.isfinite([res.f_stat, res.aic, res.bic, res.mse, res.mae]).all()
        assert res.aic < res.bic  # k*ln(100) > 2k


def synthetic_panel(rng, n_symbols, n_days, excess_fn, start_year=2017):
    """Panel with random COIs/controls and a caller-chosen excess return rule."""
    days = [d.strftime("%Y-%m-%d")
            for d in pd.bdate_range(f"{start_year}-01-02", periods=n_days)]
    rows = []
    for s in range(n_symbols):
        sym = f"S{s:03d}"
        coi = rng.uniform(-1, 1, size=(n_days, len(COI_TYPES)))
        rv = rng.uniform(0.0, 0.05, size=n_days)
        dvol = rng.uniform(1e5, 1e7, size=n_days)
        for d in range(n_days):
            rows.append(
                {"symbol": sym, "day": days[d],
                 **{f"coi_{t}": coi[d, i] for i, t in enumerate(COI_TYPES)},
                 "rv": rv[d], "dvol": dvol[d]}
            )
    panel = pd.DataFrame(rows)
    factors = pd.DataFrame({"day": days})
    for c in FACTOR_COLS + ["rf"]:
        factors[c] = rng.normal(0, 0.002, size=n_days)
    panel = panel.merge(factors, on="day")
    panel["excess"] = excess_fn(panel, rng)
    return panel


class TestPanelRegressions:
    def test_contemporaneous_planted_signal(self, rng):
        beta = 0.01
        panel = synthetic_panel(
            rng, 30, 120,
            lambda p, r: beta * p["coi_iso"].to_numpy() + r.normal(0, 1e-6, len(p)),
        )
        res = run_contemporaneous(panel, DesignSpec(coi_types=("iso",)))
        assert res.coef_of("coi_iso") == pytest.approx(beta, abs=1e-5)

    def test_controls_only_baseline(self, rng):
        panel = synthetic_panel(rng, 10, 60, lambda p, r: r.normal(0, 0.01, len(p)))
        res = run_contemporaneous(panel, DesignSpec(coi_types=()))
        assert not any(n.startswith("coi_") for n in res.names)
        assert res.label.endswith("controls-only")

    def test_all_insignificant_when_redundant(self, rng):
        # make coi_all a nearly exact mix of the leaf types
        def excess(p, r):
            return 0.01 * p["coi_iso"].to_numpy() - 0.005 * p["coi_nis_c"].to_numpy() \
                + r.normal(0, 0.005, len(p))

        panel = synthetic_panel(rng, 40, 160, excess)
        leaves = panel[["coi_iso", "coi_nis_s", "coi_nis_c", "coi_nis_b"]].to_numpy()
        panel["coi_all"] = leaves.mean(axis=1) + rng.normal(0, 1e-3, len(panel))
        res = run_contemporaneous(
            panel, DesignSpec(coi_types=("iso", "nis_s", "nis_c", "nis_b", "all"))
        )
        # oracle cross-check of the pooled fit
        cols = [f"coi_{t}" for t in ("iso", "nis_s", "nis_c", "nis_b", "all")] \
            + ["rv", "dvol"] + FACTOR_COLS
        oracle = normal_equation_oracle(panel[cols].to_numpy(), panel["excess"].to_numpy())
        np.testing.assert_allclose(res.coef, oracle, rtol=1e-8)
        assert res.pvalue_of("coi_all") > 0.05

    def test_predictive_planted_signal(self, rng):
        # r_{t+1} = beta * coi_iso_t + eps, planted by lagging the signal
        beta = 0.005
        panel = synthetic_panel(rng, 30, 200, lambda p, r: r.normal(0, 0.01, len(p)))
        panel = panel.sort_values(["symbol", "day"]).reset_index(drop=True)
        lagged = panel.groupby("symbol")["coi_iso"].shift(1).fillna(0.0).to_numpy()
        panel["excess"] = beta * lagged + rng.normal(0, 0.01, len(panel))
        res = run_predictive(panel, DesignSpec(coi_types=("iso",)))
        se = res.coef_of("coi_iso") / res.tstat_of("coi_iso")
        assert abs(res.coef_of("coi_iso") - beta) < 2 * se
        assert "excess" in res.names  # the lagged-return control is always present

    def test_predictive_single_day_errors(self, rng):
        panel = synthetic_panel(rng, 5, 1, lambda p, r: r.normal(0, 0.01, len(p)))
        with pytest.raises(DataError):
            run_predictive(panel, DesignSpec(coi_types=("iso",)))

    def test_predictive_row_order_invariance(self, rng):
        panel = synthetic_panel(rng, 8, 40, lambda p, r: r.normal(0, 0.01, len(p)))
        res = run_predictive(panel, DesignSpec(coi_types=("iso", "nis"),
                                               use_factors=False))
        shuffled = panel.sample(frac=1.0, random_state=7).reset_index(drop=True)
        res2 = run_predictive(shuffled, DesignSpec(coi_types=("iso", "nis"),
                                                   use_factors=False))
        np.testing.assert_allclose(res.coef, res2.coef, rtol=1e-12)

    def test_unknown_coi_type_rejected(self):
        with pytest.raises(DataError, match="unknown COI types"):
            DesignSpec(coi_types=("isolated",))


class TestSubperiodsAndPerSymbol:
    def test_yearly_partition_counts(self, rng):
        panel = synthetic_panel(rng, 6, 500, lambda p, r: r.normal(0, 0.01, len(p)))
        spec = DesignSpec(coi_types=("iso",))
        full = run_contemporaneous(panel, spec)
        parts = run_subperiods(panel, spec)
        assert len(parts) >= 2
        assert sum(r.nobs for r in parts.values()) == full.nobs

    def test_single_year_matches_unsplit(self, rng):
        panel = synthetic_panel(rng, 6, 100, lambda p, r: r.normal(0, 0.01, len(p)))
        spec = DesignSpec(coi_types=("iso",))
        parts = run_subperiods(panel, spec)
        assert list(parts) == ["2017"]
        np.testing.assert_allclose(
            parts["2017"].coef, run_contemporaneous(panel, spec).coef
        )

    def test_yearly_beta_stability(self, rng):
        beta = 0.01
        panel = synthetic_panel(
            rng, 20, 500,
            lambda p, r: beta * p["coi_iso"].to_numpy() + r.normal(0, 0.01, len(p)),
        )
        parts = run_subperiods(panel, DesignSpec(coi_types=("iso",)))
        for res in parts.values():
            se = res.coef_of("coi_iso") / res.tstat_of("coi_iso")
            assert abs(res.coef_of("coi_iso") - beta) < 3 * se

    def test_per_symbol_single_symbol(self, rng):
        panel = synthetic_panel(rng, 1, 80, lambda p, r: r.normal(0, 0.01, len(p)))
        summary = run_per_symbol(panel, DesignSpec(coi_types=("iso",)))
        only = next(iter(summary.results.values()))
        assert summary.mean_adj_r2 == pytest.approx(only.adj_r2)
        assert summary.mean_coef["coi_iso"] == pytest.approx(only.coef_of("coi_iso"))

    def test_per_symbol_floor_exclusion(self, rng):
        panel = synthetic_panel(rng, 4, 100, lambda p, r: r.normal(0, 0.01, len(p)))
        short_sym = panel["symbol"].iloc[0]
        panel = pd.concat(
            [panel[panel["symbol"] != short_sym],
             panel[panel["symbol"] == short_sym].head(10)],
            ignore_index=True,
        )
        summary = run_per_symbol(panel, DesignSpec(coi_types=("iso",)))
        assert short_sym in summary.excluded
        assert len(summary.results) == 3

    def test_per_symbol_shared_dgp_sign_rate(self, rng):
        beta = 0.02
        panel = synthetic_panel(
            rng, 60, 150,
            lambda p, r: beta * p["coi_iso"].to_numpy() + r.normal(0, 0.01, len(p)),
        )
        summary = run_per_symbol(panel, DesignSpec(coi_types=("iso",)))
        assert summary.pct_positive["coi_iso"] == 1.0
        assert summary.pct_significant_5["coi_iso"] > 0.9
        assert "coi_iso" in summary.histograms


def factor_frame(rng, days):
    f = pd.DataFrame({"day": days})
    for c in FACTOR_COLS:
        f[c] = rng.normal(0, 0.005, len(days))
    f["rf"] = 0.0000625
    return f


class TestAlphaRegression:
    def test_exact_factor_replication(self, rng):
        days = [f"2020-01-{d:02d}" for d in range(1, 29)]
        factors = factor_frame(rng, days)
        umd = pd.DataFrame({"day": days, "umd": rng.normal(0, 0.004, len(days))})
        port = pd.DataFrame({"day": days, "ret": factors["mkt"] + factors["rf"]})
        res = alpha_regression(port, factors, umd, hac_lags=0)
        assert res.coef_of("const") == pytest.approx(0.0, abs=1e-12)
        assert res.coef_of("mkt") == pytest.approx(1.0, abs=1e-10)
        assert res.r2 == pytest.approx(1.0)

    def test_orthogonal_alpha_recovery(self, rng):
        n = 1200
        days = [d.strftime("%Y-%m-%d") for d in pd.bdate_range("2017-01-02", periods=n)]
        factors = factor_frame(rng, days)
        umd = pd.DataFrame({"day": days, "umd": rng.normal(0, 0.004, n)})
        alpha = 0.0003
        port = pd.DataFrame(
            {"day": days, "ret": alpha + factors["rf"] + rng.normal(0, 0.002, n)}
        )
        res = alpha_regression(port, factors, umd)
        se = res.coef_of("const") / res.tstat_of("const")
        assert abs(res.coef_of("const") - alpha) < 3 * abs(se)
        assert res.hac_lags == nw_auto_lags(n)

    def test_missing_factor_day_errors(self, rng):
        days = [f"2020-02-{d:02d}" for d in range(1, 20)]
        factors = factor_frame(rng, days[:-1])
        umd = pd.DataFrame({"day": days, "umd": 0.0})
        port = pd.DataFrame({"day": days, "ret": 0.001})
        with pytest.raises(DataError, match="factor data missing"):
            alpha_regression(port, factors, umd)


class TestBuildPanel:
    def test_merge_keys(self, rng):
        wide = pd.DataFrame(
            {"symbol": ["A", "A", "B"], "day": ["d1", "d2", "d1"],
             **{f"coi_{t}": [0.1, 0.2, 0.3] for t in COI_TYPES}}
        )
        returns = pd.DataFrame(
            {"symbol": ["A", "A", "B"], "day": ["d1", "d2", "d1"],
             "raw_oc": [0.0] * 3, "excess": [0.01, -0.01, 0.0],
             "rv": [0.1] * 3, "dvol": [1.0] * 3}
        )
        factors = pd.DataFrame({"day": ["d1", "d2"],
                                **{c: [0.0, 0.0] for c in FACTOR_COLS + ["rf"]}})
        panel = build_panel(wide, returns, factors)
        assert len(panel) == 3
        assert {"coi_iso", "excess", "rv", "dvol", "mkt"} <= set(panel.columns)
