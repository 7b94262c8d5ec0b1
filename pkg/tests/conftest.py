"""Shared builders for book snapshots and synthetic tick data."""

import numpy as np
import pytest

from flowtrader.lob import LobState, TickRecord


def make_book(best_bid=100.0, best_ask=100.02, tick=0.01, ask_vol=None, bid_vol=None):
    """Ladder with 1-tick spacing away from the touch and unit volumes."""
    asks = best_ask + tick * np.arange(10)
    bids = best_bid - tick * np.arange(10)
    return LobState(
        ask_prices=asks,
        ask_volumes=np.ones(10) if ask_vol is None else np.asarray(ask_vol, dtype=float),
        bid_prices=bids,
        bid_volumes=np.ones(10) if bid_vol is None else np.asarray(bid_vol, dtype=float),
    )


def random_book(rng, tick=0.01):
    """A valid book with random level gaps and volumes."""
    best_bid = 100.0 + tick * rng.integers(-200, 200)
    spread_ticks = rng.integers(1, 4)
    ask_gaps = rng.integers(1, 4, size=9)
    bid_gaps = rng.integers(1, 4, size=9)
    asks = best_bid + tick * (spread_ticks + np.concatenate([[0], np.cumsum(ask_gaps)]))
    bids = best_bid - tick * np.concatenate([[0], np.cumsum(bid_gaps)])
    return LobState(
        ask_prices=asks,
        ask_volumes=rng.integers(0, 50, size=10).astype(float),
        bid_prices=bids,
        bid_volumes=rng.integers(0, 50, size=10).astype(float),
    )


def make_ticks(n=200, seed=0, start_ms=1_600_000_000_000, step_ms=100, mid0=100.0, tick=0.01):
    """Random-walk tick records with iid normal OFI entries."""
    rng = np.random.default_rng(seed)
    mids = mid0 + tick * np.cumsum(rng.integers(-1, 2, size=n))
    times = start_ms + step_ms * np.arange(n)
    return [
        TickRecord(int(t), rng.normal(0, 1, size=10), float(m))
        for t, m in zip(times, mids)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
