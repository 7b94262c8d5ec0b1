"""Day-sliced market replay for agent training.

One episode replays one UTC day of labeled examples.  The state the agent
sees is (alphas in pips, held position); the reward for an action is the
mark-to-market profit over the next tick, which is exactly the horizon-1
label, scaled to account currency, minus round-trip costs whenever the
action opens or reverses the position.  Summed over an episode this
equals the net profit a backtest of the same actions would book, so the
reward signal and the evaluation metric agree by construction.

Episodes always start flat: the first action opens a position (and pays
its costs), and the position resets between episodes.  A day's final
step consumes that day's last labeled example, whose one-tick horizon may
reach into the next day; labels already encode that move, so it is kept.
"""

from __future__ import annotations

import numpy as np

from .agents import Action, AgentState, direction
from .labeling import InstrumentSpec, LabeledExample, to_pips

MS_PER_DAY = 86_400_000

REWARD_CLIP_STDS = 10.0


class MarketReplayEnv:
    def __init__(self, examples: list[LabeledExample], spec: InstrumentSpec,
                 initial_position: Action = Action.BUY):
        if not examples:
            raise ValueError("need at least one labeled example")
        self.spec = spec
        self.initial_position = initial_position
        self._alphas_pips = to_pips(np.array([e.label for e in examples]), spec)
        self._step_pnl = np.array([e.label[0] for e in examples]) * spec.lot_size
        self._cost = spec.round_trip_cost()

        days = np.array([e.timestamp // MS_PER_DAY for e in examples])
        starts = [0] + list(np.nonzero(np.diff(days))[0] + 1)
        self._slices = [
            (int(s), int(e))
            for s, e in zip(starts, starts[1:] + [len(examples)])
        ]

        self.alpha_mean = self._alphas_pips.mean(axis=0)
        self.alpha_std = self._alphas_pips.std(axis=0)
        self.reward_clip = REWARD_CLIP_STDS * float(np.std(self._step_pnl))

        self._i = None
        self._end = None
        self._position = None
        self._opened = False

    @property
    def n_days(self) -> int:
        return len(self._slices)

    def episode_length(self, day: int) -> int:
        s, e = self._slices[day]
        return e - s

    def reset(self, day: int) -> AgentState:
        if not 0 <= day < self.n_days:
            raise ValueError(f"day must be in [0, {self.n_days}), got {day}")
        self._i, self._end = self._slices[day]
        self._position = self.initial_position
        self._opened = False
        return AgentState(self._alphas_pips[self._i], self._position)

    def step(self, action: Action):
        """Apply an action; returns (next_state or None, reward, done)."""
        if self._i is None or self._i >= self._end:
            raise RuntimeError("step called before reset or after episode end")
        reward = direction(action) * self._step_pnl[self._i]
        if not self._opened or action != self._position:
            reward -= self._cost
        self._opened = True
        self._position = action
        self._i += 1
        done = self._i >= self._end
        if done:
            return None, float(reward), True
        return AgentState(self._alphas_pips[self._i], self._position), float(reward), False
