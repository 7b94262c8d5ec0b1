"""Single-position backtesting, performance metrics, and rank-sum testing.

The replay protocol is always in the market: the first decision opens a
position, each later decision either holds or reverses it, and the final
position closes at the last mid.  Fills are mid plus or minus half the
fixed spread, which books identically as charging the full spread once
per round trip at entry; commission is charged per side.  Equity is
marked to mid every tick, so its last value equals the sum of net trade
profits.

The statistical comparison between two daily-profit samples is the
Mann-Whitney U test with midranks for ties, exact by enumeration for
small samples and a tie-corrected normal approximation above that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .agents import Action, direction
from .alpha_model import AlphaModel
from .alpha_model import forward as model_forward
from .labeling import InstrumentSpec, to_pips
from .lob import TickRecord

MS_PER_DAY = 86_400_000


@dataclass(frozen=True)
class Trade:
    direction: Action
    entry_ts: int
    exit_ts: int
    entry_mid: float
    exit_mid: float
    gross: float
    costs: float
    net: float


@dataclass
class TradeLog:
    trades: list[Trade]
    equity: np.ndarray  # mark-to-market per tick, net of charged costs
    timestamps: np.ndarray

    @property
    def total_net(self) -> float:
        return float(sum(t.net for t in self.trades))


@dataclass
class MetricsReport:
    daily_avg_profit: float
    daily_volatility: float
    avg_profit_loss: float | None  # None when no losing trades exist
    profitability_pct: float
    max_drawdown: float
    total_net: float
    n_trades: int
    n_days: int


class SignalEngine:
    """One decision-and-accounting step per tick, shared by the backtest
    replay and the live signal service so both emit bit-identical actions."""

    def __init__(self, agent, model: AlphaModel, spec: InstrumentSpec,
                 initial_position: Action = Action.BUY):
        self.agent = agent
        self.model = model
        self.spec = spec
        self.initial_position = initial_position
        self._realized = 0.0
        self._direction: Action | None = None
        self._entry_ts = 0
        self._entry_mid = 0.0

    def step(self, ts: int, ofi: np.ndarray, mid: float):
        """Returns (action, changed, closed trade or None)."""
        alphas = model_forward(self.model, ofi)
        pips = to_pips(alphas, self.spec)
        seen = self._direction if self._direction is not None else self.initial_position
        action = self.agent.decide(pips, seen)
        closed = None
        if self._direction is None:
            changed = True
            self._open(ts, mid, action)
        elif action != self._direction:
            changed = True
            closed = self._close(ts, mid)
            self._open(ts, mid, action)
        else:
            changed = False
        return action, changed, closed

    def _open(self, ts: int, mid: float, action: Action) -> None:
        self._direction = action
        self._entry_ts = ts
        self._entry_mid = mid

    def _close(self, ts: int, mid: float) -> Trade:
        gross = direction(self._direction) * (mid - self._entry_mid) * self.spec.lot_size
        costs = self.spec.round_trip_cost()
        trade = Trade(
            direction=self._direction,
            entry_ts=self._entry_ts,
            exit_ts=ts,
            entry_mid=self._entry_mid,
            exit_mid=mid,
            gross=gross,
            costs=costs,
            net=gross - costs,
        )
        self._realized += trade.net
        self._direction = None
        return trade

    def close_out(self, ts: int, mid: float) -> Trade | None:
        """Close any open position at the given mid; None if already flat."""
        if self._direction is None:
            return None
        return self._close(ts, mid)

    def equity(self, mid: float) -> float:
        """Realized net plus the open trade marked to `mid`, net of its costs."""
        if self._direction is None:
            return self._realized
        open_gross = direction(self._direction) * (mid - self._entry_mid) * self.spec.lot_size
        return self._realized + open_gross - self.spec.round_trip_cost()


def run_backtest(agent, records: list[TickRecord], model: AlphaModel,
                 spec: InstrumentSpec) -> TradeLog:
    """Replay records through the engine; the final position closes at the
    last mid, so the log always ends flat."""
    if not records:
        raise ValueError("need at least one tick record")
    engine = SignalEngine(agent, model, spec)
    trades: list[Trade] = []
    equity = np.empty(len(records))
    for i, rec in enumerate(records):
        _, _, closed = engine.step(rec.timestamp, rec.ofi, rec.mid)
        if closed is not None:
            trades.append(closed)
        equity[i] = engine.equity(rec.mid)
    last = records[-1]
    final = engine.close_out(last.timestamp, last.mid)
    if final is not None:
        trades.append(final)
    return TradeLog(
        trades=trades,
        equity=equity,
        timestamps=np.array([r.timestamp for r in records], dtype=np.int64),
    )


def max_drawdown(equity) -> float:
    """Largest peak-to-trough drop, as a non-positive number."""
    arr = np.asarray(equity, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("equity curve is empty")
    running_max = np.maximum.accumulate(arr)
    return float(np.min(arr - running_max))


def daily_profits(log: TradeLog) -> list[float]:
    """Net profit per UTC day, with each trade attributed to its exit day."""
    sums: dict[int, float] = {}
    for t in log.trades:
        day = t.exit_ts // MS_PER_DAY
        sums[day] = sums.get(day, 0.0) + t.net
    return [sums[d] for d in sorted(sums)]


def compute_metrics(log: TradeLog) -> MetricsReport:
    if not log.trades:
        raise ValueError("need at least one trade")
    nets = np.array([t.net for t in log.trades])
    days = daily_profits(log)
    wins = nets[nets > 0]
    losses = nets[nets < 0]
    if losses.size == 0:
        ratio = None
    elif wins.size == 0:
        ratio = 0.0
    else:
        ratio = float(wins.mean() / np.abs(losses).mean())
    return MetricsReport(
        daily_avg_profit=float(np.mean(days)),
        daily_volatility=float(np.std(days)),
        avg_profit_loss=ratio,
        profitability_pct=float(100.0 * wins.size / nets.size),
        max_drawdown=max_drawdown(log.equity),
        total_net=log.total_net,
        n_trades=len(log.trades),
        n_days=len(days),
    )


class RandomAgent:
    """Uniform coin-flip benchmark; deterministic for a fixed seed."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.algo = "random"

    def decide(self, alphas, position: Action) -> Action:
        return Action(int(self.rng.integers(2)))


def random_agent(seed: int) -> RandomAgent:
    return RandomAgent(seed)


@dataclass(frozen=True)
class MannWhitneyResult:
    u_a: float
    u_b: float
    rank_sum_a: float
    rank_sum_b: float
    p_one_sided: float  # H1: sample a tends larger than sample b
    method: str  # "exact" or "normal"


_EXACT_LIMIT = 12


def _midranks(pooled: np.ndarray) -> np.ndarray:
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(len(pooled))
    i = 0
    while i < len(pooled):
        j = i
        while j + 1 < len(pooled) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _u_from_ranks(ranks_a: np.ndarray, n_a: int) -> float:
    return float(ranks_a.sum() - n_a * (n_a + 1) / 2.0)


def mann_whitney_u(a, b) -> MannWhitneyResult:
    """One-sided U test of whether `a`'s values tend to exceed `b`'s.

    For a pooled size up to 12 the p-value enumerates every assignment of
    the observed values to the two groups, which remains exact under ties.
    Larger samples use the tie-corrected normal approximation with a
    continuity correction of one half.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n_a, n_b = len(a), len(b)
    if n_a == 0 or n_b == 0:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    rank_sum_a = float(ranks[:n_a].sum())
    rank_sum_b = float(ranks[n_a:].sum())
    u_a = rank_sum_a - n_a * (n_a + 1) / 2.0
    u_b = rank_sum_b - n_b * (n_b + 1) / 2.0

    n = n_a + n_b
    if n <= _EXACT_LIMIT:
        count = 0
        total = 0
        for picks in combinations(range(n), n_a):
            u_split = float(ranks[list(picks)].sum()) - n_a * (n_a + 1) / 2.0
            count += u_split >= u_a
            total += 1
        p = count / total
        method = "exact"
    else:
        mu = n_a * n_b / 2.0
        _, tie_counts = np.unique(pooled, return_counts=True)
        tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (n * (n - 1))
        sigma2 = n_a * n_b / 12.0 * ((n + 1) - tie_term)
        if sigma2 <= 0:
            p = 1.0
        else:
            z = (u_a - mu - 0.5) / math.sqrt(sigma2)
            p = 0.5 * math.erfc(z / math.sqrt(2.0))
        method = "normal"
    return MannWhitneyResult(
        u_a=float(u_a),
        u_b=float(u_b),
        rank_sum_a=rank_sum_a,
        rank_sum_b=rank_sum_b,
        p_one_sided=float(p),
        method=method,
    )


TRADE_HEADER = ["entry_ts", "exit_ts", "direction", "entry", "exit",
                "gross", "costs", "net"]


def write_trade_log_csv(path, log: TradeLog) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRADE_HEADER)
        for t in log.trades:
            writer.writerow([
                t.entry_ts, t.exit_ts, "buy" if t.direction == Action.BUY else "sell",
                repr(float(t.entry_mid)), repr(float(t.exit_mid)),
                repr(float(t.gross)), repr(float(t.costs)), repr(float(t.net)),
            ])


def read_trade_log_csv(path) -> list[Trade]:
    import csv

    from .errors import DataFormatError

    trades = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRADE_HEADER:
            raise DataFormatError(f"line 1: expected header {','.join(TRADE_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(TRADE_HEADER):
                raise DataFormatError(f"line {line_no}: expected {len(TRADE_HEADER)} columns")
            try:
                trades.append(Trade(
                    direction=Action.BUY if row[2] == "buy" else Action.SELL,
                    entry_ts=int(row[0]),
                    exit_ts=int(row[1]),
                    entry_mid=float(row[3]),
                    exit_mid=float(row[4]),
                    gross=float(row[5]),
                    costs=float(row[6]),
                    net=float(row[7]),
                ))
            except ValueError:
                raise DataFormatError(f"line {line_no}: non-numeric field") from None
    return trades
