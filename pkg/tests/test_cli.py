import hashlib
import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from tradeflow.cli import main
from tradeflow.market_data import trades_from_csv

MESSAGES = {
    "AAA_2020-06-01_message_10.csv": [
        "34200.000000100,4,1,100,1000000,1",
        "34200.000000100,4,2,50,1000100,1",
        "34201.5,1,3,10,1000000,1",
        "34202.0,4,4,25,1000050,-1",
    ],
    "BBB_2020-06-01_message_10.csv": [
        "34200.000500000,4,9,10,2000000,-1",
        "40000.25,4,10,30,2001000,1",
    ],
    "AAA_2020-06-02_message_10.csv": [
        "35000.0,4,21,10,1010000,1",
    ],
}


def write_message_dir(root: Path) -> Path:
    d = root / "messages"
    d.mkdir()
    for name, lines in MESSAGES.items():
        (d / name).write_text("\n".join(lines) + "\n")
    return d


def write_config(root: Path, **kwargs) -> Path:
    cfg = root / "config.json"
    cfg.write_text(json.dumps(kwargs))
    return cfg


class TestIngest:
    def make_config(self, tmp_path):
        write_message_dir(tmp_path)
        return write_config(
            tmp_path,
            messages_dir="messages",
            universe=["AAA", "BBB"],
            output_dir="out",
        )

    def test_fixture_day(self, tmp_path, capsys):
        cfg = self.make_config(tmp_path)
        assert main(["ingest", "--config", str(cfg)]) == 0
        out = tmp_path / "out" / "trades"
        files = sorted(p.name for p in out.glob("*.csv"))
        assert files == ["AAA_2020-06-01.csv", "AAA_2020-06-02.csv", "BBB_2020-06-01.csv"]
        trades = trades_from_csv(out / "AAA_2020-06-01.csv")
        # the two same-timestamp executions merged; the submission is dropped
        assert len(trades) == 2
        assert trades.iloc[0]["size"] == 150 and trades.iloc[0]["dir"] == -1
        summary = json.loads((tmp_path / "out" / "ingest_summary.json").read_text())
        # AAA d1: merged pair + one sell = 2; BBB d1: 2; AAA d2: 1
        assert summary["total_trades"] == 5

    def test_rerun_refused_without_force(self, tmp_path):
        cfg = self.make_config(tmp_path)
        assert main(["ingest", "--config", str(cfg)]) == 0
        assert main(["ingest", "--config", str(cfg)]) == 2
        assert main(["ingest", "--config", str(cfg), "--force"]) == 0

    def test_corrupt_file_names_it(self, tmp_path, capsys):
        cfg = self.make_config(tmp_path)
        bad = tmp_path / "messages" / "AAA_2020-06-03_message_10.csv"
        bad.write_text("not,a,row\n")
        assert main(["ingest", "--config", str(cfg)]) == 2
        assert "AAA_2020-06-03" in capsys.readouterr().err

    def test_missing_ticker_listed(self, tmp_path, capsys):
        write_message_dir(tmp_path)
        cfg = write_config(
            tmp_path, messages_dir="messages", universe=["AAA", "BBB", "ZZZ"], output_dir="out"
        )
        assert main(["ingest", "--config", str(cfg)]) == 2
        assert "ZZZ" in capsys.readouterr().err

    def test_missing_dir_errors(self, tmp_path):
        cfg = write_config(tmp_path, messages_dir="nope", universe=["AAA"], output_dir="out")
        assert main(["ingest", "--config", str(cfg)]) == 2


class TestUsage:
    def test_missing_config_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["classify"])
        assert exc.value.code == 1

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_unknown_config_key_is_data_error(self, tmp_path):
        cfg = write_config(tmp_path, universe=["A"], output_dir="out", typo_key=1)
        assert main(["classify", "--config", str(cfg)]) == 2

    def test_toml_config(self, tmp_path):
        write_message_dir(tmp_path)
        cfg = tmp_path / "run.toml"
        cfg.write_text(
            'messages_dir = "messages"\nuniverse = ["AAA", "BBB"]\noutput_dir = "out"\n'
        )
        assert main(["ingest", "--config", str(cfg)]) == 0


def tree_digest(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


SIM = {
    "n_symbols": 6,
    "n_days": 12,
    "trades_per_day": 60.0,
    "delta_ns": 2_000_000_000,
}


def run_pipeline(root: Path, seed: int, with_select: bool = True) -> Path:
    out = root / f"run{seed}"
    assert main(["simulate", "--out", str(out), "--seed", str(seed),
                 "--config", str(write_config(root, sim=SIM, seed=seed))]) == 0
    cfg = str(out / "config.json")
    assert main(["classify", "--config", cfg]) == 0
    if with_select:
        assert main(["select-delta", "--config", cfg]) == 0
    assert main(["coi", "--config", cfg]) == 0
    assert main(["regress", "--config", cfg]) == 0
    assert main(["backtest", "--config", cfg]) == 0
    return out


class TestPipeline:
    def test_end_to_end_artifacts(self, tmp_path):
        out = run_pipeline(tmp_path, seed=5)
        for rel in (
            "trades.csv", "bars.csv", "factors.csv", "config.json",
            "interval_counts.csv", "delta_selection.json",
            "coi.csv", "coi_stats.json",
            "regress/contemporaneous.json", "regress/predictive.csv",
            "backtest/portfolios.csv", "backtest/constituents.csv",
            "backtest/summary.json", "backtest/alpha.json", "backtest/costs.csv",
        ):
            assert (out / rel).exists(), rel

    def test_outputs_carry_config_hash(self, tmp_path):
        out = run_pipeline(tmp_path, seed=6, with_select=False)
        head = (out / "coi.csv").read_text().splitlines()[0]
        assert head.startswith("# cfg=")
        stats = json.loads((out / "coi_stats.json").read_text())
        assert "config_hash" in stats

    def test_classify_missing_upstream_names_producer(self, tmp_path, capsys):
        out = tmp_path / "empty"
        out.mkdir()
        cfg = write_config(tmp_path, universe=["A"], trades="empty/nothing.csv",
                           output_dir="empty")
        assert main(["classify", "--config", str(cfg)]) == 2

    def test_coi_requires_chosen_delta(self, tmp_path, capsys):
        out = tmp_path / "runX"
        assert main(["simulate", "--out", str(out), "--seed", "1",
                     "--config", str(write_config(tmp_path, sim=SIM))]) == 0
        cfg_data = json.loads((out / "config.json").read_text())
        cfg_data.pop("chosen_delta_ns")
        (out / "config.json").write_text(json.dumps(cfg_data))
        assert main(["classify", "--config", str(out / "config.json")]) == 0
        rc = main(["coi", "--config", str(out / "config.json")])
        assert rc == 2
        assert "select-delta" in capsys.readouterr().err

    def test_env_var_output_override(self, tmp_path, monkeypatch):
        target = tmp_path / "elsewhere"
        monkeypatch.setenv("TRADEFLOW_OUT", str(target))
        assert main(["simulate", "--seed", "2",
                     "--config", str(write_config(tmp_path, sim=SIM))]) == 0
        assert (target / "trades.csv").exists()

    def test_full_tree_determinism(self, tmp_path):
        a = run_pipeline(tmp_path / "a", seed=9)
        b = run_pipeline(tmp_path / "b", seed=9)
        da, db = tree_digest(a), tree_digest(b)
        assert da == db

    def test_seed_changes_tree(self, tmp_path):
        a = run_pipeline(tmp_path / "a", seed=9, with_select=False)
        b = run_pipeline(tmp_path / "b", seed=10, with_select=False)
        assert tree_digest(a) != tree_digest(b)


@pytest.fixture(autouse=True)
def _isolate_env(monkeypatch, tmp_path):
    monkeypatch.delenv("TRADEFLOW_OUT", raising=False)
    monkeypatch.chdir(tmp_path)
