"""OLS machinery and the imbalance-return regression suites.

Panel regressions are pooled OLS with a single intercept and classical
standard errors (the error terms are modeled i.i.d.); portfolio alpha
regressions use Newey-West (Bartlett kernel) covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import stats

from .util import COI_TYPES, DataError, NumericalError

FACTOR_COLS = ["mkt", "smb", "hml", "rmw", "cma", "mom"]


def nw_auto_lags(n: int) -> int:
    """Newey-West automatic bandwidth: floor(4 * (n/100)^(2/9))."""
    return int(np.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def significance_stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


@dataclass
class RegressionResult:
    names: list[str]
    coef: np.ndarray
    tstat: np.ndarray
    pvalue: np.ndarray
    r2: float
    adj_r2: float
    nobs: int
    f_stat: float
    aic: float
    bic: float
    mse: float
    mae: float
    hac_lags: int | None = None
    label: str = ""

    @property
    def stars(self) -> list[str]:
        return [significance_stars(p) for p in self.pvalue]

    def coef_of(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def tstat_of(self, name: str) -> float:
        return float(self.tstat[self.names.index(name)])

    def pvalue_of(self, name: str) -> float:
        return float(self.pvalue[self.names.index(name)])

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "coef": dict(zip(self.names, map(float, self.coef))),
            "tstat": dict(zip(self.names, map(float, self.tstat))),
            "pvalue": dict(zip(self.names, map(float, self.pvalue))),
            "stars": dict(zip(self.names, self.stars)),
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "nobs": self.nobs,
            "f_stat": self.f_stat,
            "aic": self.aic,
            "bic": self.bic,
            "mse": self.mse,
            "mae": self.mae,
            "hac_lags": self.hac_lags,
        }


def _check_rank(X: np.ndarray, names: list[str]) -> None:
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    dead = diag <= tol
    if dead.any():
        bad = [names[piv[i]] for i in np.flatnonzero(dead)]
        raise NumericalError(f"design matrix rank deficient; collinear columns: {bad}")


def ols_fit(
    X: np.ndarray,
    y: np.ndarray,
    names: list[str] | None = None,
    hac_lags: int | None = None,
    add_intercept: bool = True,
    label: str = "",
) -> RegressionResult:
    """Least-squares fit with classical or Newey-West covariance.

    `X` holds the regressors without a constant; an intercept ("const") is
    prepended unless `add_intercept` is False. Rows must already be complete
    (drop missing values listwise before calling). `hac_lags=None` means
    classical i.i.d. standard errors; an integer switches to the Bartlett
    kernel with that many lags (0 reproduces White's estimator exactly).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != len(y):
        raise DataError(f"X has {X.shape[0]} rows but y has {len(y)}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DataError("design matrix or response contains non-finite values")
    n = len(y)
    if names is None:
        names = [f"x{j}" for j in range(X.shape[1])]
    names = list(names)
    if add_intercept:
        X = np.column_stack([np.ones(n), X])
        names = ["const"] + names
    k = X.shape[1]
    if n <= k:
        raise DataError(f"need more observations ({n}) than parameters ({k})")
    _check_rank(X, names)

    xtx = X.T @ X
    beta = np.linalg.solve(xtx, X.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2)) if add_intercept else float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / (n - k) if add_intercept else r2

    xtx_inv = np.linalg.inv(xtx)
    if hac_lags is None:
        sigma2 = rss / (n - k)
        cov = sigma2 * xtx_inv
    else:
        L = int(hac_lags)
        if L < 0:
            raise DataError("hac_lags must be >= 0")
        xe = X * resid[:, None]
        meat = xe.T @ xe
        for j in range(1, min(L, n - 1) + 1):
            w = 1.0 - j / (L + 1.0)
            gamma = xe[j:].T @ xe[:-j]
            meat += w * (gamma + gamma.T)
        cov = xtx_inv @ meat @ xtx_inv

    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = np.where(se > 0, beta / np.where(se > 0, se, 1.0), np.inf * np.sign(beta))
    pvalue = 2.0 * stats.t.sf(np.abs(tstat), df=n - k)

    n_slopes = k - 1 if add_intercept else k
    if add_intercept and n_slopes > 0 and r2 < 1.0:
        f_stat = (r2 / n_slopes) / ((1.0 - r2) / (n - k))
    else:
        f_stat = float("nan") if n_slopes == 0 else float("inf") if r2 >= 1.0 else float("nan")
    sigma2_mle = rss / n
    if sigma2_mle > 0:
        llf = -0.5 * n * (np.log(2.0 * np.pi) + np.log(sigma2_mle) + 1.0)
    else:
        llf = float("inf")
    return RegressionResult(
        names=names,
        coef=beta,
        tstat=tstat,
        pvalue=pvalue,
        r2=r2,
        adj_r2=adj_r2,
        nobs=n,
        f_stat=f_stat,
        aic=-2.0 * llf + 2.0 * k,
        bic=-2.0 * llf + k * np.log(n),
        mse=rss / n,
        mae=float(np.mean(np.abs(resid))),
        hac_lags=hac_lags,
        label=label,
    )


# ---------------------------------------------------------------------------
# Panel assembly and the regression suites
# ---------------------------------------------------------------------------


@dataclass
class DesignSpec:
    """Which imbalances and controls enter a panel regression."""

    coi_types: tuple[str, ...] = ("iso",)
    use_rv: bool = True
    use_dvol: bool = True
    use_factors: bool = True
    start: str | None = None
    end: str | None = None
    min_obs_per_symbol: int = 30

    def __post_init__(self):
        bad = [t for t in self.coi_types if t not in COI_TYPES]
        if bad:
            raise DataError(f"unknown COI types {bad}; valid: {list(COI_TYPES)}")


def build_panel(coi_wide_df: pd.DataFrame, returns: pd.DataFrame, factors: pd.DataFrame) -> pd.DataFrame:
    """Merge wide COIs, the return panel, and daily factors on (symbol, day)."""
    panel = coi_wide_df.merge(returns, on=["symbol", "day"], how="inner")
    panel = panel.merge(factors, on="day", how="left")
    return panel.sort_values(["symbol", "day"]).reset_index(drop=True)


def _design_columns(spec: DesignSpec, lead: bool) -> list[str]:
    cols = [f"coi_{t}" for t in spec.coi_types]
    if lead:
        cols.append("excess")  # the lagged-return control of the forecasting model
    if spec.use_rv:
        cols.append("rv")
    if spec.use_dvol:
        cols.append("dvol")
    if spec.use_factors:
        cols.extend(FACTOR_COLS)
    return cols


def _clip_period(panel: pd.DataFrame, spec: DesignSpec) -> pd.DataFrame:
    if spec.start is not None:
        panel = panel[panel["day"] >= spec.start]
    if spec.end is not None:
        panel = panel[panel["day"] <= spec.end]
    return panel


def _fit_panel(panel: pd.DataFrame, spec: DesignSpec, lead: bool, label: str) -> RegressionResult:
    panel = _clip_period(panel, spec).sort_values(["symbol", "day"], kind="stable")
    if lead:
        panel = panel.assign(_y=panel.groupby("symbol")["excess"].shift(-1))
    else:
        panel = panel.assign(_y=panel["excess"])
    cols = _design_columns(spec, lead)
    sub = panel.dropna(subset=cols + ["_y"])
    if sub.empty:
        raise DataError(f"no usable observations for {label!r} "
                        f"(a one-day panel has no lead return)" if lead else
                        f"no usable observations for {label!r}")
    return ols_fit(sub[cols].to_numpy(), sub["_y"].to_numpy(), names=cols, label=label)


def run_contemporaneous(panel: pd.DataFrame, spec: DesignSpec) -> RegressionResult:
    """Same-day market-excess returns on the chosen imbalances plus controls.

    An empty `coi_types` gives the controls-only baseline.
    """
    label = "+".join(spec.coi_types) if spec.coi_types else "controls-only"
    return _fit_panel(panel, spec, lead=False, label=f"contemporaneous:{label}")


def run_predictive(panel: pd.DataFrame, spec: DesignSpec) -> RegressionResult:
    """Next-day market-excess returns on today's imbalances.

    Today's excess return is always included as a control; the last day of
    each symbol drops out for lack of a lead return.
    """
    label = "+".join(spec.coi_types) if spec.coi_types else "controls-only"
    return _fit_panel(panel, spec, lead=True, label=f"predictive:{label}")


def run_subperiods(
    panel: pd.DataFrame, spec: DesignSpec, lead: bool = False
) -> dict[str, RegressionResult]:
    """Calendar-year splits of the pooled regression; thin years are skipped."""
    out = {}
    years = sorted(panel["day"].str.slice(0, 4).unique())
    for year in years:
        yearly = panel[panel["day"].str.startswith(year)]
        try:
            out[year] = _fit_panel(yearly, spec, lead, label=f"{year}")
        except (DataError, NumericalError):
            continue  # insufficient data for this year: reported as absent
    return out


@dataclass
class PerSymbolSummary:
    results: dict[str, RegressionResult]
    excluded: list[str]
    mean_coef: dict[str, float]
    pct_positive: dict[str, float]
    pct_significant_5: dict[str, float]
    mean_adj_r2: float
    histograms: dict[str, dict] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "n_symbols": len(self.results),
            "excluded": self.excluded,
            "mean_coef": self.mean_coef,
            "pct_positive": self.pct_positive,
            "pct_significant_5": self.pct_significant_5,
            "mean_adj_r2": self.mean_adj_r2,
            "histograms": self.histograms,
            "per_symbol": {s: r.as_dict() for s, r in self.results.items()},
        }


def run_per_symbol(
    panel: pd.DataFrame, spec: DesignSpec, lead: bool = False, hist_bins: int = 20
) -> PerSymbolSummary:
    """One time-series regression per symbol plus the cross-sectional digest.

    Symbols with fewer usable observations than `spec.min_obs_per_symbol`
    are excluded and listed.
    """
    results: dict[str, RegressionResult] = {}
    excluded: list[str] = []
    for sym, g in panel.groupby("symbol", sort=True):
        cols = _design_columns(spec, lead)
        usable = g.dropna(subset=[c for c in cols if c in g.columns])
        if len(usable) - (1 if lead else 0) < max(spec.min_obs_per_symbol, len(cols) + 2):
            excluded.append(sym)
            continue
        try:
            results[sym] = _fit_panel(g, spec, lead, label=str(sym))
        except (DataError, NumericalError):
            excluded.append(sym)
    if not results:
        raise DataError("no symbol met the per-symbol observation floor")

    names = next(iter(results.values())).names
    mean_coef, pct_pos, pct_sig, hists = {}, {}, {}, {}
    for name in names:
        coefs = np.array([r.coef_of(name) for r in results.values()])
        pvals = np.array([r.pvalue_of(name) for r in results.values()])
        mean_coef[name] = float(coefs.mean())
        pct_pos[name] = float((coefs > 0).mean())
        pct_sig[name] = float((pvals < 0.05).mean())
        if name.startswith("coi_"):
            counts, edges = np.histogram(coefs, bins=hist_bins)
            hists[name] = {"counts": counts.tolist(), "bin_edges": edges.tolist()}
    return PerSymbolSummary(
        results=results,
        excluded=excluded,
        mean_coef=mean_coef,
        pct_positive=pct_pos,
        pct_significant_5=pct_sig,
        mean_adj_r2=float(np.mean([r.adj_r2 for r in results.values()])),
        histograms=hists,
    )


def alpha_regression(
    portfolio: pd.DataFrame,
    factors: pd.DataFrame,
    umd: pd.DataFrame,
    hac_lags: int | None = None,
    label: str = "",
) -> RegressionResult:
    """Time-series regression of portfolio excess returns on the six factors
    plus the in-universe momentum factor, with Newey-West standard errors.

    `portfolio` needs columns day/ret; `umd` columns day/umd. Missing factor
    days are an error. `hac_lags=None` applies the automatic bandwidth.
    """
    merged = portfolio[["day", "ret"]].merge(umd, on="day", how="left")
    merged = merged.merge(factors, on="day", how="left")
    if merged[FACTOR_COLS + ["rf"]].isna().any().any():
        missing = merged.loc[merged[FACTOR_COLS + ["rf"]].isna().any(axis=1), "day"]
        raise DataError(f"factor data missing for portfolio days: {list(missing)[:5]}")
    if merged["umd"].isna().any():
        missing = merged.loc[merged["umd"].isna(), "day"]
        raise DataError(f"momentum factor missing for portfolio days: {list(missing)[:5]}")
    y = merged["ret"].to_numpy() - merged["rf"].to_numpy()
    X = merged[FACTOR_COLS + ["umd"]].to_numpy()
    lags = nw_auto_lags(len(y)) if hac_lags is None else int(hac_lags)
    return ols_fit(X, y, names=FACTOR_COLS + ["umd"], hac_lags=lags, label=label)


def results_table(results: list[RegressionResult]) -> pd.DataFrame:
    """Coefficient table: one row per model, `0.0123***` with t underneath-style cells."""
    rows = []
    for r in results:
        row = {"model": r.label, "adj_r2": r.adj_r2, "nobs": r.nobs}
        for name, c, t, star in zip(r.names, r.coef, r.tstat, r.stars):
            row[name] = f"{c:.6g}{star}"
            row[f"t({name})"] = f"({t:.2f})"
        rows.append(row)
    return pd.DataFrame(rows)
