"""Shared plumbing: errors, clock constants, seeded RNG streams, config hashing."""

from __future__ import annotations

import hashlib
import json
import zlib
from pathlib import Path

import numpy as np

NS_PER_SEC = 1_000_000_000
SESSION_OPEN_NS = 34_200 * NS_PER_SEC    # 09:30:00
SESSION_CLOSE_NS = 57_600 * NS_PER_SEC   # 16:00:00
SESSION_SPAN_NS = SESSION_CLOSE_NS - SESSION_OPEN_NS
INTERVAL_NS = 300 * NS_PER_SEC           # 5-minute buckets
N_INTERVALS = SESSION_SPAN_NS // INTERVAL_NS  # 78

TRADE_CLASSES = ("iso", "nis_s", "nis_c", "nis_b")
COI_TYPES = ("all", "iso", "nis", "nis_s", "nis_c", "nis_b")


class TradeflowError(Exception):
    """Base for all errors raised by this package."""


class DataError(TradeflowError):
    """Malformed, missing, or inconsistent input data."""


class NumericalError(TradeflowError):
    """Numerically impossible request (rank deficiency, zero variance, ...)."""


def _philox_key(seed: int, name: str) -> np.ndarray:
    return np.array(
        [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())], dtype=np.uint64
    )


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent, reproducible RNG stream keyed by (seed, name).

    Uses the counter-based Philox generator so streams never depend on draw
    order elsewhere in the program.
    """
    return np.random.Generator(np.random.Philox(key=_philox_key(seed, name)))


def substream_chunk(seed: int, name: str, chunk: int) -> np.random.Generator:
    """Worker stream for chunked work; deterministic per chunk index.

    The chunk lands in the top counter word, so chunk streams can never
    overlap no matter how much each one draws.
    """
    counter = np.array([0, 0, 0, int(chunk)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_philox_key(seed, name), counter=counter))


_HASH_EXCLUDED = ("output_dir", "out", "threads", "force")


def config_hash(cfg_dict: dict) -> str:
    """Short stable hash of a config mapping.

    Keys that cannot change artifact content (output location, thread count,
    overwrite flag) are excluded so the same logical run writes byte-identical
    artifacts regardless of where or how parallel it ran.
    """
    skim = {k: v for k, v in sorted(cfg_dict.items()) if k not in _HASH_EXCLUDED}
    blob = json.dumps(skim, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def write_csv(df, path: Path, cfg_hash: str | None = None) -> None:
    """Write a DataFrame as CSV, with an optional leading `# cfg=` comment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if cfg_hash:
            fh.write(f"# cfg={cfg_hash}\n")
        df.to_csv(fh, index=False)


def write_json(obj: dict, path: Path, cfg_hash: str | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if cfg_hash:
        obj = {"config_hash": cfg_hash, **obj}
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def parse_window(spec: str) -> tuple[int, int]:
    """Parse a window id like 'full' or '0930-1000' into [start_ns, end_ns]."""
    if spec == "full":
        return SESSION_OPEN_NS, SESSION_CLOSE_NS
    try:
        lo, hi = spec.split("-")
        start = (int(lo[:2]) * 3600 + int(lo[2:]) * 60) * NS_PER_SEC
        end = (int(hi[:2]) * 3600 + int(hi[2:]) * 60) * NS_PER_SEC
    except (ValueError, IndexError) as exc:
        raise DataError(f"bad window spec {spec!r}, expected 'full' or 'HHMM-HHMM'") from exc
    if not SESSION_OPEN_NS <= start < end <= SESSION_CLOSE_NS:
        raise DataError(f"window {spec!r} outside the 09:30-16:00 session")
    return start, end


DEFAULT_WINDOWS = ("full", "0930-1000", "1000-1530", "1530-1600")
