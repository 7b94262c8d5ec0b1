"""Limit-order-book snapshots and the features derived from them.

A snapshot carries ten price levels per side.  Two consecutive snapshots
define per-level order flow: a side's flow is the traded-or-posted volume
signed by how its price moved, which nets arrivals against cancellations
without needing message data.  The bid/ask flows combine into the
order-flow imbalance (OFI) vector that feeds every model downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, InvariantError, OrderingError

N_LEVELS = 10

TICK_HEADER = ["time"] + [f"ofi_{i}" for i in range(1, N_LEVELS + 1)] + ["mid"]


def _as_levels(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (N_LEVELS,):
        raise InvariantError(f"{name} must have exactly {N_LEVELS} levels, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvariantError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class LobState:
    """One book snapshot: ten ask and ten bid levels with volumes.

    Ask prices ascend away from the touch, bid prices descend, and the
    book must be uncrossed (best ask strictly above best bid).  Violations
    are rejected at construction.
    """

    ask_prices: np.ndarray
    ask_volumes: np.ndarray
    bid_prices: np.ndarray
    bid_volumes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ask_prices", _as_levels(self.ask_prices, "ask_prices"))
        object.__setattr__(self, "ask_volumes", _as_levels(self.ask_volumes, "ask_volumes"))
        object.__setattr__(self, "bid_prices", _as_levels(self.bid_prices, "bid_prices"))
        object.__setattr__(self, "bid_volumes", _as_levels(self.bid_volumes, "bid_volumes"))
        if np.any(np.diff(self.ask_prices) <= 0):
            raise InvariantError("ask prices must be strictly increasing")
        if np.any(np.diff(self.bid_prices) >= 0):
            raise InvariantError("bid prices must be strictly decreasing")
        if self.ask_prices[0] <= self.bid_prices[0]:
            raise InvariantError(
                f"crossed book: best ask {self.ask_prices[0]} <= best bid {self.bid_prices[0]}"
            )
        if np.any(self.ask_volumes < 0) or np.any(self.bid_volumes < 0):
            raise InvariantError("volumes must be non-negative")


@dataclass(frozen=True)
class TickRecord:
    """One row of the model-ready tick stream: timestamp, OFI vector, mid."""

    timestamp: int
    ofi: np.ndarray
    mid: float

    def __post_init__(self):
        object.__setattr__(self, "timestamp", int(self.timestamp))
        object.__setattr__(self, "ofi", _as_levels(self.ofi, "ofi"))
        object.__setattr__(self, "mid", float(self.mid))
        if not (np.isfinite(self.mid) and self.mid > 0):
            raise InvariantError(f"mid must be positive and finite, got {self.mid}")


@dataclass(frozen=True)
class FeatureBundle:
    """Classic per-snapshot state vectors built from a short book history."""

    mid: float
    mid_deltas: np.ndarray  # last `window` one-step mid changes
    prices: np.ndarray  # (a1, b1, ..., a10, b10)
    volumes: np.ndarray  # (v1a, v1b, ..., v10a, v10b)
    volume_sums: np.ndarray  # (sum ask volume, sum bid volume)
    vd: float  # sum over levels of (ask volume - bid volume)
    cvd: np.ndarray  # last `window` one-step changes of vd


@dataclass(frozen=True)
class LevelStats:
    """Distribution summary of one series dimension."""

    mean: float
    std: float
    pct_positive: float
    pct_negative: float
    pct_zero: float


def mid_price(book: LobState) -> float:
    """Midpoint of the touch: (best ask + best bid) / 2."""
    return (book.ask_prices[0] + book.bid_prices[0]) / 2.0


def _ask_flow(prev: LobState, cur: LobState) -> np.ndarray:
    down = cur.ask_prices < prev.ask_prices
    up = cur.ask_prices > prev.ask_prices
    return np.where(
        down, cur.ask_volumes, np.where(up, -cur.ask_volumes, cur.ask_volumes - prev.ask_volumes)
    )


def _bid_flow(prev: LobState, cur: LobState) -> np.ndarray:
    up = cur.bid_prices > prev.bid_prices
    down = cur.bid_prices < prev.bid_prices
    return np.where(
        up, cur.bid_volumes, np.where(down, -cur.bid_volumes, cur.bid_volumes - prev.bid_volumes)
    )


def order_flow(prev: LobState, cur: LobState) -> np.ndarray:
    """Per-level order flow between two consecutive snapshots.

    At level n, with prices p and volumes v indexed by time t:

        ask flow = v_t        if ask price fell        (aggressive quoting)
                   v_t - v_-1 if ask price unchanged   (net volume change)
                   -v_t       if ask price rose        (level retreated)

        bid flow mirrors this with the inequality directions swapped:
        a rising bid contributes +v_t, a falling bid contributes -v_t.

    Returns the 20-vector (bid flow levels 1..10, ask flow levels 1..10).
    """
    return np.concatenate([_bid_flow(prev, cur), _ask_flow(prev, cur)])


def ofi(prev: LobState, cur: LobState) -> np.ndarray:
    """Order-flow imbalance per level: bid flow minus ask flow.

    Positive entries mean net buying pressure at that depth.  Identical
    consecutive snapshots give the zero vector.
    """
    return _bid_flow(prev, cur) - _ask_flow(prev, cur)


def classic_features(history: list[LobState], window: int = 10) -> FeatureBundle:
    """Benchmark state vectors at the latest snapshot of `history`.

    Needs window + 1 snapshots so that `window` one-step differences of
    both the mid price and the volume divergence exist.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if len(history) < window + 1:
        raise ValueError(
            f"need at least {window + 1} snapshots for window {window}, got {len(history)}"
        )
    recent = history[-(window + 1):]
    latest = recent[-1]

    mids = np.array([mid_price(b) for b in recent])
    vds = np.array([float(np.sum(b.ask_volumes - b.bid_volumes)) for b in recent])

    prices = np.empty(2 * N_LEVELS)
    prices[0::2] = latest.ask_prices
    prices[1::2] = latest.bid_prices
    volumes = np.empty(2 * N_LEVELS)
    volumes[0::2] = latest.ask_volumes
    volumes[1::2] = latest.bid_volumes

    return FeatureBundle(
        mid=float(mids[-1]),
        mid_deltas=np.diff(mids),
        prices=prices,
        volumes=volumes,
        volume_sums=np.array([latest.ask_volumes.sum(), latest.bid_volumes.sum()]),
        vd=float(vds[-1]),
        cvd=np.diff(vds),
    )


def summary_stats(series) -> list[LevelStats]:
    """Per-dimension mean, population std, and exact sign percentages.

    `series` is an (N, D) array or a sequence of D-vectors.  Percentages
    use exact comparison with zero and sum to 100 per dimension.
    """
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"need a non-empty (N, D) series, got shape {arr.shape}")
    n = arr.shape[0]
    out = []
    for d in range(arr.shape[1]):
        col = arr[:, d]
        out.append(
            LevelStats(
                mean=float(col.mean()),
                std=float(col.std()),
                pct_positive=float(100.0 * np.count_nonzero(col > 0) / n),
                pct_negative=float(100.0 * np.count_nonzero(col < 0) / n),
                pct_zero=float(100.0 * np.count_nonzero(col == 0) / n),
            )
        )
    return out


def _parse_float(text: str, line_no: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataFormatError(f"line {line_no}: column '{column}' is not numeric: {text!r}") from None


def parse_tick_csv(path) -> list[TickRecord]:
    """Read a tick stream: header `time,ofi_1..ofi_10,mid`, one record per row.

    Timestamps are integer epoch milliseconds and must strictly increase.
    Errors name the offending 1-based line number.
    """
    records: list[TickRecord] = []
    last_ts = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("line 1: empty file, expected header") from None
        if header != TICK_HEADER:
            raise DataFormatError(f"line 1: expected header {','.join(TICK_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(TICK_HEADER):
                raise DataFormatError(
                    f"line {line_no}: expected {len(TICK_HEADER)} columns, got {len(row)}"
                )
            try:
                ts = int(row[0])
            except ValueError:
                raise DataFormatError(
                    f"line {line_no}: column 'time' is not an integer: {row[0]!r}"
                ) from None
            if last_ts is not None and ts <= last_ts:
                raise OrderingError(
                    f"line {line_no}: timestamp {ts} does not increase past {last_ts}"
                )
            last_ts = ts
            values = [
                _parse_float(cell, line_no, name)
                for cell, name in zip(row[1:], TICK_HEADER[1:])
            ]
            try:
                records.append(TickRecord(ts, np.array(values[:-1]), values[-1]))
            except InvariantError as exc:
                raise DataFormatError(f"line {line_no}: {exc}") from None
    return records


def write_tick_csv(path, records: list[TickRecord]) -> None:
    """Write records in the format `parse_tick_csv` reads.

    Floats are serialized with repr so a parse/write cycle round-trips
    bit-exactly.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TICK_HEADER)
        for rec in records:
            writer.writerow(
                [rec.timestamp] + [repr(float(v)) for v in rec.ofi] + [repr(float(rec.mid))]
            )
