"""Synthetic tick streams with controllable predictive structure.

Three generators share one shape of output: a strictly increasing
timestamp grid, a positive mid-price path moving in whole ticks, and a
ten-level OFI vector whose deeper levels are attenuated, noisier copies
of level one (mirroring how real books update mostly near the touch).

`predictive_alpha` plants a signal: the sign of the level-1 OFI entry
equals the sign of the next one-tick mid move with probability
(1 + signal_strength) / 2, and the OFI magnitude is drawn independently
of whether the sign agrees.  At strength 1 the next move is fully
revealed; at strength 0 the stream carries no information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lob import TickRecord

KINDS = ("random_walk", "predictive_alpha", "mean_reverting")

_DEFAULT_START_MS = 1_704_067_200_000  # 2024-01-01T00:00:00Z
_LEVEL_ATTENUATION = 0.7
_MIN_MID_TICKS = 10


@dataclass(frozen=True)
class SynthConfig:
    kind: str
    steps: int
    tick_size: float = 0.01
    signal_strength: float = 0.0
    noise_std: float = 1.0
    seed: int = 0
    # Timestamp layout: with ticks_per_day set, ticks are spaced so exactly
    # that many fall inside each UTC day, giving day-sliced episodes.
    start_ms: int = _DEFAULT_START_MS
    ticks_per_day: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.steps < 100:
            raise ValueError(f"steps must be >= 100, got {self.steps}")
        if self.tick_size <= 0:
            raise ValueError(f"tick_size must be positive, got {self.tick_size}")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError(f"signal_strength must be in [0, 1], got {self.signal_strength}")
        if self.noise_std <= 0:
            raise ValueError(f"noise_std must be positive, got {self.noise_std}")
        if self.ticks_per_day is not None and self.ticks_per_day < 2:
            raise ValueError("ticks_per_day must be at least 2")


def _timestamps(cfg: SynthConfig) -> np.ndarray:
    if cfg.ticks_per_day is None:
        step = 100
    else:
        step = 86_400_000 // cfg.ticks_per_day
        if step < 1:
            raise ValueError("ticks_per_day too large for millisecond spacing")
    return cfg.start_ms + step * np.arange(cfg.steps, dtype=np.int64)


def _mid_path(cfg: SynthConfig, moves: np.ndarray) -> np.ndarray:
    """Integrate tick moves from a fixed anchor, floored away from zero."""
    start_ticks = 10_000
    path = start_ticks + np.concatenate([[0], np.cumsum(moves)])
    low = path.min()
    if low < _MIN_MID_TICKS:  # lift the whole path rather than distort moves
        path = path + (_MIN_MID_TICKS - low)
    return path * cfg.tick_size


def _ofi_levels(rng: np.random.Generator, level1: np.ndarray, noise_std: float) -> np.ndarray:
    n = level1.shape[0]
    ofi = np.empty((n, 10))
    ofi[:, 0] = level1
    for k in range(1, 10):
        ofi[:, k] = (
            _LEVEL_ATTENUATION**k * level1 + 0.3 * noise_std * rng.normal(size=n)
        )
    return ofi


def generate(cfg: SynthConfig) -> list[TickRecord]:
    """Produce `cfg.steps` tick records, deterministic per seed."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.steps
    times = _timestamps(cfg)

    if cfg.kind == "random_walk":
        moves = rng.choice([-1, 0, 1], size=n - 1, p=[0.25, 0.5, 0.25])
        level1 = rng.normal(0.0, cfg.noise_std, size=n)
        mids = _mid_path(cfg, moves)
    elif cfg.kind == "predictive_alpha":
        moves = rng.choice([-1, 1], size=n - 1)
        agree = rng.random(size=n - 1) < (1.0 + cfg.signal_strength) / 2.0
        signs = np.where(agree, moves, -moves).astype(np.float64)
        magnitudes = np.abs(rng.normal(0.0, cfg.noise_std, size=n))
        level1 = magnitudes * np.concatenate([signs, [1.0]])  # last tick sees no future
        mids = _mid_path(cfg, moves)
    else:  # mean_reverting
        anchor = 10_000
        pos = anchor
        moves = np.empty(n - 1, dtype=np.int64)
        pulls = rng.random(size=n - 1)
        for t in range(n - 1):
            p_up = float(np.clip(0.5 - 0.01 * (pos - anchor), 0.05, 0.95))
            moves[t] = 1 if pulls[t] < p_up else -1
            pos += moves[t]
        level1 = rng.normal(0.0, cfg.noise_std, size=n)
        mids = _mid_path(cfg, moves)

    ofi = _ofi_levels(rng, level1, cfg.noise_std)
    return [
        TickRecord(int(times[t]), ofi[t], float(mids[t]))
        for t in range(n)
    ]
