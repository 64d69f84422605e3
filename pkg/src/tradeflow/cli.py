"""Command line pipeline.

Subcommands: simulate, ingest, classify, select-delta, coi, regress, backtest.
Every command is driven by one TOML/JSON config (flags win over file values),
writes CSV/JSON artifacts stamped with the config hash, and is deterministic
given config + seed + inputs.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import market_data as md
from .coi import coi_stats, coi_wide, compute_coi
from .config import RunConfig, load_config
from .cooccurrence import interval_counts, label_counts, sweep_trades
from .null_model import empirical_fractions, interval_null_profile, select_delta, NULL_CLASSES
from .portfolio import (
    SortSpec,
    apply_costs,
    build_benchmarks,
    build_long_short,
    summarize,
    umd_factor,
)
from .regression import (
    DesignSpec,
    alpha_regression,
    build_panel,
    results_table,
    run_contemporaneous,
    run_per_symbol,
    run_predictive,
    run_subperiods,
)
from .simulate import SimParams, generate_market
from .util import DataError, NumericalError, TradeflowError, write_csv, write_json

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

MESSAGE_FILE_RE = re.compile(r"^(?P<ticker>[A-Z.\-]+)_(?P<day>\d{4}-\d{2}-\d{2})_message_.*\.csv$")


def _table(cfg: RunConfig) -> md.SymbolTable:
    if not cfg.universe:
        raise DataError("config universe must list at least one ticker")
    return md.SymbolTable.from_lists(list(cfg.universe), list(cfg.market) if cfg.market else None)


def _trades_path(cfg: RunConfig) -> Path:
    if cfg.trades is not None:
        return cfg.path("trades")
    return cfg.out_dir / "trades"


def _load_factors(cfg: RunConfig) -> pd.DataFrame:
    mom = cfg.path("momentum") if cfg.momentum else None
    return md.parse_factors(cfg.path("factors"), mom)


def _chosen_delta(cfg: RunConfig) -> int:
    if cfg.chosen_delta_ns:
        return int(cfg.chosen_delta_ns)
    selection = cfg.out_dir / "delta_selection.json"
    if selection.exists():
        with open(selection) as fh:
            return int(json.load(fh)["chosen_delta_ns"])
    if len(cfg.deltas_ns) == 1:
        return cfg.deltas_ns[0]
    raise DataError(
        "no neighbourhood size chosen: set chosen_delta_ns or run the select-delta command"
    )


def _refuse_existing(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise DataError(f"{path} already exists; pass --force to overwrite")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> int:
    try:
        params = SimParams(**cfg.sim)
    except TypeError as exc:
        raise DataError(f"bad sim config: {exc}") from None
    out = cfg.out_dir
    _refuse_existing(out / "trades.csv", cfg.force)
    data = generate_market(params, cfg.seed)
    h = cfg.cfg_hash

    md.trades_to_csv(data["trades"], out / "trades.csv", h)
    write_csv(data["bars"], out / "bars.csv", h)
    write_csv(data["factors"], out / "factors.csv", h)
    write_csv(data["truth"], out / "truth.csv", h)

    delta = int(params.delta_ns)
    grid = sorted({max(1, delta // 10), max(1, delta // 2), delta, 2 * delta})
    downstream = {
        "trades": "trades.csv",
        "bars": "bars.csv",
        "factors": "factors.csv",
        "universe": data["symbols"],
        "market": data["symbols"],
        "spy": params.spy,
        "deltas_ns": grid,
        "chosen_delta_ns": delta,
        "measure": cfg.measure,
        "rf_daily": params.rf_daily,
        "seed": cfg.seed,
        "output_dir": ".",
        "sim": cfg.sim,
    }
    write_json(downstream, out / "config.json")
    print(f"simulate: {len(data['trades'])} trades, {len(data['symbols'])} symbols, "
          f"{len(data['days'])} days -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig) -> int:
    messages_dir = cfg.path("messages_dir")
    if not messages_dir.is_dir():
        raise DataError(f"messages dir not found: {messages_dir}")
    table = _table(cfg)
    wanted = sorted(set(table.tickers))
    files = []
    for f in sorted(messages_dir.iterdir()):
        m = MESSAGE_FILE_RE.match(f.name)
        if m and m["ticker"] in wanted:
            files.append((m["ticker"], m["day"], f))
    have = {t for t, _, _ in files}
    absent = [t for t in wanted if t not in have]
    if absent:
        raise DataError(f"no message files for: {absent}")

    out_trades = cfg.out_dir / "trades"
    if out_trades.exists() and any(out_trades.iterdir()):
        if not cfg.force:
            raise DataError(f"{out_trades} is not empty; pass --force to overwrite")
    out_trades.mkdir(parents=True, exist_ok=True)
    h = cfg.cfg_hash

    def one(job):
        ticker, day, path = job
        messages = md.parse_lobster_messages(path)
        trades, diag = md.infer_trades(messages, include_hidden=cfg.include_hidden)
        trades = trades.assign(symbol=ticker, day=day)
        return ticker, day, trades, diag

    with ThreadPoolExecutor(max_workers=cfg.n_threads) as pool:
        results = list(pool.map(one, files))

    summary = {"files": {}, "total_trades": 0, "conflict_groups": 0}
    for ticker, day, trades, diag in results:
        md.trades_to_csv(trades, out_trades / f"{ticker}_{day}.csv", h)
        summary["files"][f"{ticker}_{day}"] = diag | {"trades_out": int(len(trades))}
        summary["total_trades"] += int(len(trades))
        summary["conflict_groups"] += diag["conflict_groups"]
    write_json(summary, cfg.out_dir / "ingest_summary.json", h)
    print(f"ingest: {len(files)} files -> {summary['total_trades']} trades in {out_trades}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# classify / select-delta
# ---------------------------------------------------------------------------


def cmd_classify(cfg: RunConfig) -> int:
    trades = md.load_trades(_trades_path(cfg))
    table = _table(cfg)
    out = cfg.out_dir
    h = cfg.cfg_hash
    _refuse_existing(out / "interval_counts.csv", cfg.force)

    labeled = sweep_trades(trades, table, cfg.deltas_ns, threads=cfg.n_threads)
    universe = list(np.array(table.tickers)[table.universe_mask])
    for delta, labels in labeled.items():
        write_csv(labels, out / "labels" / f"labels_{delta}ns.csv", h)
        counts = label_counts(labels, universe, cfg.windows)
        write_csv(counts, out / "counts" / f"counts_{delta}ns.csv", h)
    write_csv(interval_counts(trades, table), out / "interval_counts.csv", h)
    print(f"classify: {len(trades)} trades, {len(cfg.deltas_ns)} neighbourhood sizes -> {out}")
    return EXIT_OK


def _read_counts(cfg: RunConfig, delta: int) -> pd.DataFrame:
    path = cfg.out_dir / "counts" / f"counts_{delta}ns.csv"
    if not path.exists():
        raise DataError(f"{path} missing; run the classify command first")
    return pd.read_csv(path, comment="#", dtype={"symbol": str, "day": str})


def cmd_select_delta(cfg: RunConfig) -> int:
    ivpath = cfg.out_dir / "interval_counts.csv"
    if not ivpath.exists():
        raise DataError(f"{ivpath} missing; run the classify command first")
    intervals = pd.read_csv(ivpath, comment="#", dtype={"symbol": str, "day": str})
    table = _table(cfg)

    emp_by_delta, null_by_delta = {}, {}
    for delta in cfg.deltas_ns:
        emp_by_delta[delta] = empirical_fractions(_read_counts(cfg, delta))
        null_by_delta[delta] = interval_null_profile(intervals, delta, table)
    chosen, distances = select_delta(emp_by_delta, null_by_delta, cfg.deltas_ns)

    rows = []
    for delta in cfg.deltas_ns:
        merged = emp_by_delta[delta].merge(
            null_by_delta[delta], on=["symbol", "day"], suffixes=("_emp", "_null")
        )
        for cls in NULL_CLASSES:
            rows.append(
                {
                    "delta_ns": delta,
                    "type": cls,
                    "null_prob": merged[f"{cls}_null"].mean(),
                    "emp_prob": merged[f"{cls}_emp"].mean(),
                    "weighted_distance": distances[delta],
                }
            )
    h = cfg.cfg_hash
    write_csv(pd.DataFrame(rows), cfg.out_dir / "delta_selection.csv", h)
    write_json(
        {"chosen_delta_ns": chosen, "distances": {str(k): v for k, v in distances.items()}},
        cfg.out_dir / "delta_selection.json",
        h,
    )
    print(f"select-delta: chose {chosen} ns "
          f"(distance {distances[chosen]:.4f} over {len(cfg.deltas_ns)} candidates)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# coi
# ---------------------------------------------------------------------------


def cmd_coi(cfg: RunConfig) -> int:
    delta = _chosen_delta(cfg)
    counts = _read_counts(cfg, delta)
    pieces = [compute_coi(counts, cfg.measure, w) for w in cfg.windows]
    coi = pd.concat(pieces, ignore_index=True)
    h = cfg.cfg_hash
    write_csv(coi, cfg.out_dir / "coi.csv", h)
    try:
        stats = coi_stats(coi, cfg.measure, "full").as_dict()
    except DataError as exc:
        stats = {"skipped": str(exc)}
    write_json({"delta_ns": delta, "measure": cfg.measure, **stats},
               cfg.out_dir / "coi_stats.json", h)
    print(f"coi: {len(coi)} rows at delta={delta} ns ({cfg.measure}) -> {cfg.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# regress
# ---------------------------------------------------------------------------


def _load_coi(cfg: RunConfig) -> pd.DataFrame:
    path = cfg.out_dir / "coi.csv"
    if not path.exists():
        raise DataError(f"{path} missing; run the coi command first")
    return pd.read_csv(path, comment="#", dtype={"symbol": str, "day": str})


def _returns_panel(cfg: RunConfig) -> pd.DataFrame:
    bars = md.read_bars(cfg.path("bars"))
    trades = md.load_trades(_trades_path(cfg))
    return md.compute_returns(bars, trades, spy_ticker=cfg.spy)


def cmd_regress(cfg: RunConfig) -> int:
    coi = _load_coi(cfg)
    returns = _returns_panel(cfg)
    factors = _load_factors(cfg)
    md.factors_for_days(factors, returns["day"].unique())
    panel = build_panel(coi_wide(coi, cfg.measure, "full"), returns, factors)

    contemp, pred = [], []
    skipped = {}
    for types in cfg.coi_sets:
        spec = DesignSpec(coi_types=tuple(types), min_obs_per_symbol=cfg.min_obs_per_symbol)
        for runner, bucket, tag in (
            (run_contemporaneous, contemp, "contemporaneous"),
            (run_predictive, pred, "predictive"),
        ):
            label = "+".join(types) if types else "controls-only"
            try:
                bucket.append(runner(panel, spec))
            except (DataError, NumericalError) as exc:
                # a degenerate design (constant imbalance column on a thin
                # sample) should not abort the remaining models
                skipped[f"{tag}:{label}"] = str(exc)
    if not contemp and not pred:
        raise DataError(f"every regression failed; first: {next(iter(skipped.values()))}")

    h = cfg.cfg_hash
    out = cfg.out_dir / "regress"
    contemp_json = {r.label: r.as_dict() for r in contemp}
    pred_json = {r.label: r.as_dict() for r in pred}
    for key, msg in skipped.items():
        target = contemp_json if key.startswith("contemporaneous") else pred_json
        target[key] = {"skipped": msg}
    write_json(contemp_json, out / "contemporaneous.json", h)
    write_json(pred_json, out / "predictive.json", h)
    write_csv(results_table(contemp), out / "contemporaneous.csv", h)
    write_csv(results_table(pred), out / "predictive.csv", h)

    if cfg.yearly:
        yearly = {}
        for types in cfg.coi_sets:
            spec = DesignSpec(coi_types=tuple(types), min_obs_per_symbol=cfg.min_obs_per_symbol)
            label = "+".join(types) if types else "controls-only"
            for lead, tag in ((False, "contemporaneous"), (True, "predictive")):
                for year, res in run_subperiods(panel, spec, lead=lead).items():
                    yearly[f"{tag}:{label}:{year}"] = res.as_dict()
        write_json(yearly, out / "yearly.json", h)

    if cfg.per_symbol:
        per_symbol = {}
        for t in ("all", "iso", "nis", "nis_s", "nis_c", "nis_b"):
            spec = DesignSpec(coi_types=(t,), min_obs_per_symbol=cfg.min_obs_per_symbol)
            for lead, tag in ((False, "contemporaneous"), (True, "predictive")):
                try:
                    per_symbol[f"{tag}:{t}"] = run_per_symbol(panel, spec, lead=lead).as_dict()
                except DataError as exc:
                    per_symbol[f"{tag}:{t}"] = {"skipped": str(exc)}
        write_json(per_symbol, out / "per_symbol.json", h)

    print(f"regress: {len(contemp)} contemporaneous + {len(pred)} predictive models -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# backtest
# ---------------------------------------------------------------------------


def cmd_backtest(cfg: RunConfig) -> int:
    coi = _load_coi(cfg)
    returns = _returns_panel(cfg)
    factors = _load_factors(cfg)
    bars = md.read_bars(cfg.path("bars"))
    wide = coi_wide(coi, cfg.measure, "full")
    stocks = returns[returns["symbol"] != cfg.spy]

    series = {}
    for s in cfg.sorts:
        spec = SortSpec(
            primary=s["primary"], secondary=s.get("secondary"), n_buckets=cfg.n_buckets
        )
        cols = {"symbol": "symbol", "day": "day", f"coi_{spec.primary}": "value"}
        needed = [f"coi_{spec.primary}"]
        if spec.secondary is not None:
            cols[f"coi_{spec.secondary}"] = "value2"
            needed.append(f"coi_{spec.secondary}")
        missing = [c for c in needed if c not in wide.columns]
        if missing:
            raise DataError(f"COI table lacks {missing} for sort {spec.label!r}")
        signals = wide[["symbol", "day"] + needed].rename(columns=cols)
        series[spec.label] = build_long_short(signals, stocks, spec)

    benchmarks = build_benchmarks(wide, returns, bars, cfg.spy, cfg.n_buckets)
    # the 'all' single sort already covers the undecomposed-imbalance benchmark
    benchmarks = {k: v for k, v in benchmarks.items() if k != "all" or "all" not in series}
    series.update(benchmarks)
    umd = umd_factor(stocks)

    port_rows = []
    member_rows = []
    for label in sorted(series):
        s = series[label]
        for _, r in s.returns.iterrows():
            port_rows.append({"label": label, "day": r["day"], "return": r["ret"]})
        if len(s.constituents):
            member_rows.append(s.constituents.assign(label=label))
    h = cfg.cfg_hash
    out = cfg.out_dir / "backtest"
    write_csv(pd.DataFrame(port_rows, columns=["label", "day", "return"]),
              out / "portfolios.csv", h)
    members = (
        pd.concat(member_rows, ignore_index=True)[["label", "day", "symbol", "weight"]]
        if member_rows
        else pd.DataFrame(columns=["label", "day", "symbol", "weight"])
    )
    write_csv(members, out / "constituents.csv", h)
    write_csv(umd, out / "umd.csv", h)

    summary, cumulative = summarize(series, cfg.rf_daily)
    write_csv(cumulative, out / "cumulative.csv", h)

    cost_free = {"equal_weight", "spy_oc", "spy_cc"}  # no daily rebalancing there
    cost_rows = []
    for label in sorted(series):
        if label in cost_free:
            continue
        for bps in cfg.cost_bps:
            net = apply_costs(series[label], float(bps))
            net_summary = summarize({label: net}, cfg.rf_daily)[0]
            if len(net_summary):
                cost_rows.append(
                    {"label": label, "bps": float(bps),
                     "ann_return": float(net_summary["ann_return"].iloc[0]),
                     "sharpe": float(net_summary["sharpe"].iloc[0])}
                )
    write_csv(pd.DataFrame(cost_rows), out / "costs.csv", h)

    alphas = {}
    umd_days = set(umd["day"])
    for label in sorted(series):
        # the momentum factor only exists from the second day on; align
        sub = series[label].returns[series[label].returns["day"].isin(umd_days)]
        if len(sub) < 10:
            continue
        try:
            alphas[label] = alpha_regression(sub, factors, umd, label=label).as_dict()
        except (DataError, NumericalError) as exc:
            alphas[label] = {"skipped": str(exc)}
    write_json(alphas, out / "alpha.json", h)
    write_json(
        {"portfolios": summary.set_index("label").to_dict(orient="index")},
        out / "summary.json",
        h,
    )
    print(f"backtest: {len(series)} portfolios over {summary['n_days'].max()} days -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "classify": cmd_classify,
    "select-delta": cmd_select_delta,
    "coi": cmd_coi,
    "regress": cmd_regress,
    "backtest": cmd_backtest,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="tradeflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=(name != "simulate"),
                       help="TOML or JSON run configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--include-hidden", action="store_true",
                       help="treat hidden executions as trades during ingest")
        if name == "classify":
            p.add_argument("--deltas", help="comma-separated neighbourhood sizes in ns")
        if name in ("coi", "regress", "backtest"):
            p.add_argument("--delta", type=int, help="chosen neighbourhood size in ns")
            p.add_argument("--measure", choices=["count", "volume"])
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    over = {
        "output_dir": args.out,
        "seed": args.seed,
        "threads": args.threads,
    }
    if args.force:
        over["force"] = True
    if args.include_hidden:
        over["include_hidden"] = True
    if getattr(args, "deltas", None):
        over["deltas_ns"] = [int(x) for x in args.deltas.split(",")]
    if getattr(args, "delta", None):
        over["chosen_delta_ns"] = args.delta
    if getattr(args, "measure", None):
        over["measure"] = args.measure
    return over


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config, _overrides(args))
        else:
            cfg = RunConfig.from_dict(
                {k: v for k, v in _overrides(args).items() if v is not None}
            )
        return COMMANDS[args.command](cfg)
    except NumericalError as exc:
        print(f"tradeflow {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"tradeflow {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TradeflowError as exc:
        print(f"tradeflow {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
