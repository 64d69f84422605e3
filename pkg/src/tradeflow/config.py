"""Declarative run configuration: one TOML/JSON file drives every subcommand.

Paths inside a config are resolved relative to the config file's directory.
The config hash stamped into output headers is computed over the raw mapping
(minus the output directory), so relocating a run does not change its bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .util import DEFAULT_WINDOWS, DataError, config_hash

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

# 0.05 ms .. 50 ms
DEFAULT_DELTAS_NS = [50_000, 75_000, 125_000, 250_000, 500_000, 1_000_000, 5_000_000, 50_000_000]

DECOMPOSED = ["iso", "nis", "nis_s", "nis_c", "nis_b"]

DEFAULT_COI_SETS = [
    [],  # controls-only baseline
    ["all"], ["iso"], ["nis"], ["nis_s"], ["nis_c"], ["nis_b"],
    ["iso", "nis"],
    ["iso", "nis_c"],
    ["iso", "nis_c", "nis_b"],
    ["iso", "nis_c", "nis_b", "nis_s"],
    ["iso", "nis_c", "nis_b", "nis_s", "nis"],
    ["iso", "nis_c", "nis_b", "nis_s", "all"],
    ["iso", "nis_c", "nis_b", "nis_s", "nis", "all"],
]


def default_sorts() -> list[dict]:
    sorts = [{"primary": t} for t in ["all"] + DECOMPOSED]
    sorts += [
        {"primary": a, "secondary": b}
        for i, a in enumerate(DECOMPOSED)
        for b in DECOMPOSED[i + 1 :]
    ]
    return sorts


_KNOWN_KEYS = {
    "messages_dir", "trades", "bars", "factors", "momentum",
    "universe", "market", "spy",
    "deltas_ns", "chosen_delta_ns", "windows", "measure",
    "coi_sets", "min_obs_per_symbol", "per_symbol", "yearly",
    "sorts", "n_buckets", "cost_bps", "rf_daily",
    "seed", "threads", "include_hidden", "force", "output_dir",
    "sim",
}


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    messages_dir: str | None = None
    trades: str | None = None
    bars: str | None = None
    factors: str | None = None
    momentum: str | None = None
    universe: list = field(default_factory=list)
    market: list | None = None
    spy: str = "SPY"
    deltas_ns: list = field(default_factory=lambda: list(DEFAULT_DELTAS_NS))
    chosen_delta_ns: int | None = None
    windows: list = field(default_factory=lambda: list(DEFAULT_WINDOWS))
    measure: str = "count"
    coi_sets: list = field(default_factory=lambda: [list(s) for s in DEFAULT_COI_SETS])
    min_obs_per_symbol: int = 30
    per_symbol: bool = False
    yearly: bool = False
    sorts: list = field(default_factory=default_sorts)
    n_buckets: int = 5
    cost_bps: list = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0, 5.0])
    rf_daily: float = 0.0000625
    seed: int = 0
    threads: int | None = None
    include_hidden: bool = False
    force: bool = False
    output_dir: str = "out"
    sim: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | str = ".") -> "RunConfig":
        unknown = set(data) - _KNOWN_KEYS
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(raw=dict(data), base_dir=Path(base_dir))
        for key, value in data.items():
            setattr(cfg, key, value)
        if cfg.measure not in ("count", "volume"):
            raise DataError(f"measure must be count|volume, got {cfg.measure!r}")
        if any(int(d) < 1 for d in cfg.deltas_ns):
            raise DataError("all deltas_ns must be >= 1")
        cfg.deltas_ns = sorted({int(d) for d in cfg.deltas_ns})
        return cfg

    @property
    def cfg_hash(self) -> str:
        return config_hash(self.raw)

    def path(self, key: str) -> Path:
        value = getattr(self, key)
        if value is None:
            raise DataError(f"config is missing the {key!r} path")
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        override = os.environ.get("TRADEFLOW_OUT")
        value = Path(override) if override else Path(self.output_dir)
        return value if value.is_absolute() else (Path.cwd() / value if override else self.base_dir / value)

    @property
    def n_threads(self) -> int:
        return self.threads if self.threads else (os.cpu_count() or 1)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    else:
        with open(path) as fh:
            data = json.load(fh)
    data.pop("config_hash", None)  # stamp left by a producing command
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data, base_dir=path.parent)
