"""Temporal-difference trading agents over bucketized alpha states.

The action set is {sell, buy}; holding is expressed by repeating the
current direction.  States pair the six-horizon alpha vector (in pips)
with the held position.  The tabular learner applies the classic update

    Q(s,a) <- Q(s,a) + lr * (r + gamma * max_a' Q(s',a') - Q(s,a))

on a 5^6 x 2 x 2 table (62,500 cells).  The network learners replace the
table with a small MLP over the standardized alphas plus a +/-1 position
flag.  One variant syncs a frozen target network every C steps and
bootstraps from its max; the double variant lets the target network
choose the successor action, evaluates it with the primary network, and
tracks the target by a Polyak step every environment step.

Exploration is epsilon-greedy with a per-episode exponential schedule,
and exact value ties resolve to the action that keeps the current
position, so an indifferent agent does not churn.
"""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass
from enum import IntEnum

import numpy as np

from .errors import DivergenceError
from .nets import Adam, Mlp, hard_sync, selected_output_loss, soft_update
from .store import read_blob, write_blob

N_HORIZONS = 6
N_BUCKETS = 5
N_ACTIONS = 2
BUCKET_HALF_WIDTH_STDS = 2.5


class Action(IntEnum):
    SELL = 0
    BUY = 1


def direction(action: Action) -> int:
    """Signed exposure of an action: +1 long, -1 short."""
    return 1 if action == Action.BUY else -1


@dataclass(frozen=True)
class AgentState:
    """What the agent sees: per-horizon alphas in pips plus held direction."""

    alphas: np.ndarray
    position: Action

    def __post_init__(self):
        object.__setattr__(self, "alphas", np.asarray(self.alphas, dtype=np.float64))
        if self.alphas.shape != (N_HORIZONS,):
            raise ValueError(f"alphas must be ({N_HORIZONS},), got {self.alphas.shape}")


@dataclass(frozen=True)
class BucketSpec:
    """Equal-width bucket bounds per horizon; out-of-range values clamp."""

    lower: np.ndarray
    upper: np.ndarray
    n_buckets: int = N_BUCKETS

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=np.float64))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=np.float64))
        if self.lower.shape != (N_HORIZONS,) or self.upper.shape != (N_HORIZONS,):
            raise ValueError("bucket bounds must have one entry per horizon")
        if np.any(self.upper <= self.lower):
            raise ValueError("upper bounds must exceed lower bounds")

    @classmethod
    def from_stats(cls, mean, std, half_width_stds: float = BUCKET_HALF_WIDTH_STDS):
        """Bounds at mean +/- 2.5 std per horizon, the training convention."""
        mean = np.asarray(mean, dtype=np.float64)
        std = np.asarray(std, dtype=np.float64)
        width = np.where(std > 0, half_width_stds * std, 1.0)
        return cls(lower=mean - width, upper=mean + width)

    def centers(self) -> np.ndarray:
        """(n_buckets, horizons) midpoints of each bucket."""
        width = (self.upper - self.lower) / self.n_buckets
        offsets = (np.arange(self.n_buckets) + 0.5)[:, None]
        return self.lower + offsets * width


def bucketize(alphas, spec: BucketSpec) -> tuple:
    """Map an alpha vector to per-horizon bucket indices, clamping the tails."""
    arr = np.asarray(alphas, dtype=np.float64)
    width = (spec.upper - spec.lower) / spec.n_buckets
    idx = np.floor((arr - spec.lower) / width).astype(np.int64)
    return tuple(int(i) for i in np.clip(idx, 0, spec.n_buckets - 1))


@dataclass(frozen=True)
class AgentConfig:
    learning_rate: float = 0.01
    gamma: float = 0.95
    epsilon_max: float = 1.0
    epsilon_min: float = 0.1
    epsilon_decay: float = 0.935
    episodes: int = 80
    batch_size: int = 128
    buffer_capacity: int = 10_000
    target_update_frequency: int = 3  # hard-sync period in environment steps
    target_update_weight: float = 0.2  # Polyak tau for the double variant
    l2_lambda: float = 1e-5
    hidden: tuple = (64, 64)
    sigmoid_output: bool = True
    clip_rewards: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0 <= self.epsilon_min <= self.epsilon_max <= 1:
            raise ValueError("need 0 <= epsilon_min <= epsilon_max <= 1")
        if not 0 < self.epsilon_decay <= 1:
            raise ValueError(f"epsilon_decay must be in (0, 1], got {self.epsilon_decay}")
        if self.episodes < 1 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("episodes, batch_size, buffer_capacity must be positive")
        if self.target_update_frequency < 1:
            raise ValueError("target_update_frequency must be positive")
        if not 0 < self.target_update_weight <= 1:
            raise ValueError("target_update_weight must be in (0, 1]")


def epsilon_at(episode: int, cfg: AgentConfig) -> float:
    """Exploration rate for a zero-based episode index, floored at the minimum."""
    return max(cfg.epsilon_min, cfg.epsilon_max * cfg.epsilon_decay**episode)


class QTable:
    """Dense action-value table over bucket indices, position, and action."""

    SHAPE = (N_BUCKETS,) * N_HORIZONS + (2, N_ACTIONS)

    def __init__(self, values: np.ndarray | None = None, counts: np.ndarray | None = None):
        self.values = np.zeros(self.SHAPE) if values is None else values
        self.counts = np.zeros(self.SHAPE, dtype=np.int64) if counts is None else counts
        if self.values.shape != self.SHAPE or self.counts.shape != self.SHAPE:
            raise ValueError(f"table must have shape {self.SHAPE}")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.SHAPE))


def q_update(table: QTable, state_key: tuple, action: Action, reward: float,
             next_key: tuple | None, cfg: AgentConfig) -> float:
    """One Bellman update in place; returns the new cell value.

    `state_key` is (*bucket indices, position).  A `next_key` of None marks
    an episode-terminal transition, which bootstraps nothing.
    """
    cell = state_key + (int(action),)
    q = table.values[cell]
    next_max = 0.0 if next_key is None else float(table.values[next_key].max())
    updated = q + cfg.learning_rate * (reward + cfg.gamma * next_max - q)
    table.values[cell] = updated
    table.counts[cell] += 1
    return float(updated)


def _choose(values: np.ndarray, position: Action, epsilon: float,
            rng: np.random.Generator) -> Action:
    if epsilon > 0.0 and rng.random() < epsilon:
        return Action(int(rng.integers(N_ACTIONS)))
    if values[0] == values[1]:
        return position
    return Action(int(np.argmax(values)))


class TabularAgent:
    def __init__(self, table: QTable, buckets: BucketSpec, config: AgentConfig):
        self.table = table
        self.buckets = buckets
        self.config = config
        self.algo = "q"

    def action_values(self, alphas, position: Action) -> np.ndarray:
        key = bucketize(alphas, self.buckets) + (int(position),)
        return self.table.values[key]

    def decide(self, alphas, position: Action) -> Action:
        return _choose(self.action_values(alphas, position), position, 0.0, _NO_RNG)

    def act(self, alphas, position: Action, epsilon: float, rng: np.random.Generator) -> Action:
        return _choose(self.action_values(alphas, position), position, epsilon, rng)


class NetworkAgent:
    """Value-network agent; inputs are standardized alphas plus position flag."""

    def __init__(self, net: Mlp, buckets: BucketSpec, alpha_mean, alpha_std,
                 config: AgentConfig, algo: str):
        self.net = net
        self.buckets = buckets
        self.alpha_mean = np.asarray(alpha_mean, dtype=np.float64)
        self.alpha_std = np.asarray(alpha_std, dtype=np.float64)
        self.config = config
        self.algo = algo

    def encode(self, alphas, position: Action) -> np.ndarray:
        std = np.where(self.alpha_std == 0.0, 1.0, self.alpha_std)
        normed = (np.asarray(alphas, dtype=np.float64) - self.alpha_mean) / std
        return np.concatenate([normed, [float(direction(position))]])

    def action_values(self, alphas, position: Action) -> np.ndarray:
        return self.net.forward(self.encode(alphas, position))

    def decide(self, alphas, position: Action) -> Action:
        return _choose(self.action_values(alphas, position), position, 0.0, _NO_RNG)

    def act(self, alphas, position: Action, epsilon: float, rng: np.random.Generator) -> Action:
        return _choose(self.action_values(alphas, position), position, epsilon, rng)


class _NeverRandom:
    def random(self):  # pragma: no cover - greedy paths never draw
        raise AssertionError("greedy decision must not consume randomness")

    def integers(self, *_):  # pragma: no cover
        raise AssertionError("greedy decision must not consume randomness")


_NO_RNG = _NeverRandom()


class ReplayBuffer:
    """FIFO transition store; sampling is uniform without replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, state_vec, action, reward, next_vec, terminal) -> None:
        self._items.append((state_vec, int(action), float(reward), next_vec, bool(terminal)))

    def sample(self, rng: np.random.Generator, k: int):
        if k > len(self._items):
            raise ValueError(f"cannot sample {k} of {len(self._items)} transitions")
        picks = rng.choice(len(self._items), size=k, replace=False)
        states = np.array([self._items[i][0] for i in picks])
        actions = np.array([self._items[i][1] for i in picks], dtype=np.int64)
        rewards = np.array([self._items[i][2] for i in picks])
        next_states = np.array([self._items[i][3] for i in picks])
        terminals = np.array([self._items[i][4] for i in picks], dtype=bool)
        return states, actions, rewards, next_states, terminals


def _clip_reward(reward: float, env, cfg: AgentConfig) -> float:
    bound = getattr(env, "reward_clip", None)
    if not cfg.clip_rewards or bound is None or bound <= 0:
        return reward
    return float(np.clip(reward, -bound, bound))


def train_q(env, cfg: AgentConfig) -> tuple[TabularAgent, list[float]]:
    """Tabular learning over day episodes; returns the agent and reward curve.

    Episode e replays day e mod env.n_days.  The reward curve records the
    raw (unclipped) per-episode reward sums.
    """
    buckets = BucketSpec.from_stats(env.alpha_mean, env.alpha_std)
    table = QTable()
    rng = np.random.default_rng(cfg.seed)
    agent = TabularAgent(table, buckets, cfg)
    curve = []
    for episode in range(cfg.episodes):
        eps = epsilon_at(episode, cfg)
        state = env.reset(episode % env.n_days)
        total = 0.0
        while True:
            key = bucketize(state.alphas, buckets) + (int(state.position),)
            action = _choose(table.values[key], state.position, eps, rng)
            next_state, reward, done = env.step(action)
            total += reward
            next_key = (
                None if done
                else bucketize(next_state.alphas, buckets) + (int(next_state.position),)
            )
            q_update(table, key, action, reward, next_key, cfg)
            if done:
                break
            state = next_state
        curve.append(total)
    return agent, curve


def _train_network(env, cfg: AgentConfig, algo: str) -> tuple[NetworkAgent, list[float]]:
    root = np.random.SeedSequence(cfg.seed)
    explore_seq, init_seq, sample_seq = root.spawn(3)
    rng = np.random.default_rng(explore_seq)
    sample_rng = np.random.default_rng(sample_seq)

    buckets = BucketSpec.from_stats(env.alpha_mean, env.alpha_std)
    dims = [N_HORIZONS + 1, *cfg.hidden, N_ACTIONS]
    output = "sigmoid" if cfg.sigmoid_output else "identity"
    primary = Mlp.init(dims, seed=int(init_seq.generate_state(1)[0]), output=output)
    target = primary.copy()
    adam = Adam(cfg.learning_rate)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    agent = NetworkAgent(primary, buckets, env.alpha_mean, env.alpha_std, cfg, algo)

    step_count = 0
    curve = []
    for episode in range(cfg.episodes):
        eps = epsilon_at(episode, cfg)
        state = env.reset(episode % env.n_days)
        vec = agent.encode(state.alphas, state.position)
        total = 0.0
        while True:
            action = _choose(primary.forward(vec), state.position, eps, rng)
            next_state, reward, done = env.step(action)
            total += reward
            next_vec = (
                np.zeros(N_HORIZONS + 1) if done
                else agent.encode(next_state.alphas, next_state.position)
            )
            buffer.push(vec, action, _clip_reward(reward, env, cfg), next_vec, done)
            step_count += 1

            if len(buffer) >= cfg.batch_size:
                xs, acts, rs, xns, terms = buffer.sample(sample_rng, cfg.batch_size)
                if algo == "dqn":
                    next_q = target.forward(xns).max(axis=1)
                else:  # double variant: target picks, primary evaluates
                    chosen = np.argmax(target.forward(xns), axis=1)
                    next_q = primary.forward(xns)[np.arange(len(chosen)), chosen]
                targets = rs + cfg.gamma * next_q * ~terms
                loss, grads = selected_output_loss(primary, xs, acts, targets, cfg.l2_lambda)
                if not np.isfinite(loss):
                    raise DivergenceError(f"non-finite value loss at step {step_count}")
                adam.step(primary.params(), grads)
                if algo == "dqn" and step_count % cfg.target_update_frequency == 0:
                    hard_sync(target, primary)

            if algo == "ddqn":
                soft_update(target, primary, cfg.target_update_weight)

            if done:
                break
            state, vec = next_state, next_vec
        curve.append(total)
    return agent, curve


def train_dqn(env, cfg: AgentConfig) -> tuple[NetworkAgent, list[float]]:
    """Replay-buffer value learning with a periodically hard-synced target."""
    return _train_network(env, cfg, "dqn")


def train_ddqn(env, cfg: AgentConfig) -> tuple[NetworkAgent, list[float]]:
    """Double variant: target net selects successor actions, primary evaluates
    them, and the target tracks the primary by Polyak averaging every step."""
    return _train_network(env, cfg, "ddqn")


TRANSITIONS = {
    "short_to_long": (Action.SELL, Action.BUY),
    "long_to_short": (Action.BUY, Action.SELL),
}


def _value_grid(agent, position: Action, action: Action) -> np.ndarray:
    """Action values over the full bucket grid, shape (5,) * 6."""
    if isinstance(agent, TabularAgent):
        return agent.table.values[..., int(position), int(action)]
    centers = agent.buckets.centers()  # (buckets, horizons)
    mesh = np.meshgrid(*[np.arange(N_BUCKETS)] * N_HORIZONS, indexing="ij")
    idx = np.stack([m.ravel() for m in mesh], axis=1)  # (5^6, 6)
    alphas = centers[idx, np.arange(N_HORIZONS)]
    std = np.where(agent.alpha_std == 0.0, 1.0, agent.alpha_std)
    normed = (alphas - agent.alpha_mean) / std
    flags = np.full((normed.shape[0], 1), float(direction(position)))
    values = agent.net.forward(np.hstack([normed, flags]))[:, int(action)]
    return values.reshape((N_BUCKETS,) * N_HORIZONS)


def _normalize_heatmap(matrix: np.ndarray) -> np.ndarray:
    """Scale into [-1, 1] preserving signs; a flat matrix maps to zeros.

    Flat allows for last-ulp jitter from the averaging step, so an
    indifferent agent exports exact zeros instead of a sign pattern of
    rounding noise.
    """
    scale = float(np.abs(matrix).max())
    if float(matrix.max() - matrix.min()) <= 1e-12 * max(1.0, scale):
        return np.zeros_like(matrix)
    return matrix / scale


def _rows_from_grid(grid: np.ndarray, visited: np.ndarray | None) -> np.ndarray:
    """(horizons x buckets) slice means; `visited` masks which cells count."""
    matrix = np.empty((N_HORIZONS, N_BUCKETS))
    for h in range(N_HORIZONS):
        other_axes = tuple(a for a in range(N_HORIZONS) if a != h)
        if visited is None:
            matrix[h] = grid.mean(axis=other_axes)
        else:
            num = np.where(visited, grid, 0.0).sum(axis=other_axes)
            den = visited.sum(axis=other_axes)
            matrix[h] = np.where(den > 0, num / np.maximum(den, 1), 0.0)
    return matrix


def export_q_heatmap(agent) -> dict[str, np.ndarray]:
    """Per-transition (horizons x buckets) maps of averaged action values.

    Row h holds the mean action value per horizon-h bucket, averaged over
    the other horizons' buckets, then normalized per matrix.  For a trained
    table the average runs over visited cells only (unvisited cells still
    hold the zero initializer, which would drown sparsely visited tail
    buckets); a table without visit counts averages every cell.  Network
    grids are defined everywhere, so they always average every cell.
    """
    out = {}
    for name, (position, action) in TRANSITIONS.items():
        grid = _value_grid(agent, position, action)
        visited = None
        if isinstance(agent, TabularAgent) and agent.table.counts.sum() > 0:
            visited = agent.table.counts[..., int(position), int(action)] > 0
        out[name] = _normalize_heatmap(_rows_from_grid(grid, visited))
    return out


def write_heatmap_csv(path, heatmaps: dict[str, np.ndarray]) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["transition", "horizon"] + [f"bucket_{b}" for b in range(N_BUCKETS)])
        for name in TRANSITIONS:
            for h in range(N_HORIZONS):
                writer.writerow([name, h + 1] + [repr(float(v)) for v in heatmaps[name][h]])


def _config_meta(cfg: AgentConfig) -> dict:
    meta = asdict(cfg)
    meta["hidden"] = list(meta["hidden"])
    return meta


def save_agent(path, agent) -> None:
    """Write a self-describing agent file (kind `agent-<algo>`)."""
    base = {
        "bucket_lower": agent.buckets.lower,
        "bucket_upper": agent.buckets.upper,
    }
    if isinstance(agent, TabularAgent):
        arrays = {"values": agent.table.values, "counts": agent.table.counts, **base}
        write_blob(path, "agent-q", {"config": _config_meta(agent.config)}, arrays)
        return
    arrays = {
        "alpha_mean": agent.alpha_mean,
        "alpha_std": agent.alpha_std,
        **base,
    }
    for l, (w, b) in enumerate(zip(agent.net.weights, agent.net.biases)):
        arrays[f"w{l}"] = w
        arrays[f"b{l}"] = b
    meta = {"config": _config_meta(agent.config), "output": agent.net.output}
    write_blob(path, f"agent-{agent.algo}", meta, arrays)


def load_agent(path):
    kind, meta, arrays = read_blob(path)
    if not kind.startswith("agent-"):
        from .errors import DataFormatError

        raise DataFormatError(f"{path}: expected an agent file, found kind {kind!r}")
    algo = kind.removeprefix("agent-")
    cfg_meta = dict(meta["config"])
    cfg_meta["hidden"] = tuple(cfg_meta["hidden"])
    cfg = AgentConfig(**cfg_meta)
    buckets = BucketSpec(lower=arrays["bucket_lower"], upper=arrays["bucket_upper"])
    if algo == "q":
        table = QTable(values=arrays["values"], counts=arrays["counts"])
        return TabularAgent(table, buckets, cfg)
    dims = [N_HORIZONS + 1, *cfg.hidden, N_ACTIONS]
    net = Mlp(
        dims=dims,
        output=meta["output"],
        weights=[arrays[f"w{l}"] for l in range(len(dims) - 1)],
        biases=[arrays[f"b{l}"] for l in range(len(dims) - 1)],
    )
    return NetworkAgent(net, buckets, arrays["alpha_mean"], arrays["alpha_std"], cfg, algo)
