"""DQN machinery shared by every learned manager.

Q-networks plug in through a small duck-typed surface:

* ``forward(obs_batch, actions=None) -> (q, cache)``: ``q`` is (batch, n_actions),
  or (batch,) holding only the taken actions' values when ``actions`` is given
* ``backward(cache, dq) -> grads`` aligned with ``params()``, ``dq`` shaped like ``q``
* ``params()``, ``copy_from(other)``, ``clone()`` from :class:`hgrl.nn.Module`

Observations are dicts of numpy arrays. Each dict carries a boolean ``mask``
of valid actions, used both for acting and for the max in the TD target.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .env import ConfigError, NetworkPDEnv, EnvState
from .nn import AdamState, NumericalError, adam_update

log = logging.getLogger(__name__)


class NoValidAction(RuntimeError):
    pass


@dataclass
class Transition:
    obs: dict
    action: int
    reward: float
    next_obs: dict
    done: bool

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise NumericalError("transition reward is not finite")


@dataclass
class Batch:
    obs: dict
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: dict
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling (no repeats in a batch)."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise ConfigError("replay capacity must be positive")
        self.capacity = capacity
        self.rng = rng
        self._store: dict[str, np.ndarray] | None = None
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def _allocate(self, tr: Transition):
        store = {}
        for prefix, obs in (("obs/", tr.obs), ("next/", tr.next_obs)):
            for key, value in obs.items():
                value = np.asarray(value)
                store[prefix + key] = np.zeros((self.capacity, *value.shape), dtype=value.dtype)
        store["action"] = np.zeros(self.capacity, dtype=np.int64)
        store["reward"] = np.zeros(self.capacity, dtype=np.float64)
        store["done"] = np.zeros(self.capacity, dtype=bool)
        self._store = store

    def push(self, tr: Transition) -> None:
        if self._store is None:
            self._allocate(tr)
        i = self._next
        s = self._store
        for key, value in tr.obs.items():
            s["obs/" + key][i] = value
        for key, value in tr.next_obs.items():
            s["next/" + key][i] = value
        s["action"][i] = tr.action
        s["reward"][i] = tr.reward
        s["done"][i] = tr.done
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _oldest_first(self) -> np.ndarray:
        start = self._next if self._size == self.capacity else 0
        return (start + np.arange(self._size)) % self.capacity

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first (for inspection and tests)."""
        out = []
        for i in self._oldest_first():
            b = self._gather(np.array([i]))
            out.append(
                Transition(
                    {k: v[0] for k, v in b.obs.items()},
                    int(b.actions[0]),
                    float(b.rewards[0]),
                    {k: v[0] for k, v in b.next_obs.items()},
                    bool(b.dones[0]),
                )
            )
        return out

    def _gather(self, idx: np.ndarray) -> Batch:
        s = self._store
        obs = {k[4:]: v[idx] for k, v in s.items() if k.startswith("obs/")}
        nxt = {k[5:]: v[idx] for k, v in s.items() if k.startswith("next/")}
        return Batch(obs, s["action"][idx], s["reward"][idx], nxt, s["done"][idx])

    def sample(self, k: int) -> Batch:
        if k > self._size:
            raise ValueError(f"cannot sample {k} from {self._size} transitions")
        idx = self.rng.choice(self._size, size=k, replace=False)
        return self._gather(idx)


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    decay_steps: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.end <= self.start <= 1.0:
            raise ConfigError("need 0 <= eps_end <= eps_start <= 1")
        if self.decay_steps < 0:
            raise ConfigError("decay_steps must be >= 0")

    def __call__(self, t: int) -> float:
        if t >= self.decay_steps:
            return self.end
        return self.start + (self.end - self.start) * (t / self.decay_steps)


@dataclass(frozen=True)
class DqnConfig:
    gamma: float = 0.99
    lr: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 50_000
    target_sync_interval: int = 500
    warmup: int = 1_000
    episodes: int = 2_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    # rewards are multiplied by this before entering the replay buffer; keeps
    # Q targets O(1) so Adam does not spend thousands of steps on scale
    reward_scale: float = 0.01
    hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            raise ConfigError("need 1 <= batch_size <= buffer_capacity")
        if self.lr <= 0 or self.reward_scale <= 0:
            raise ConfigError("lr and reward_scale must be positive")
        if self.episodes < 0 or self.warmup < 0 or self.target_sync_interval < 1:
            raise ConfigError("episodes/warmup must be >= 0 and target_sync_interval >= 1")
        if not 0.0 <= self.eps_decay_fraction <= 1.0:
            raise ConfigError("eps_decay_fraction must lie in [0, 1]")
        EpsilonSchedule(self.eps_start, self.eps_end, 0)

    def schedule(self, episodes: int) -> EpsilonSchedule:
        return EpsilonSchedule(self.eps_start, self.eps_end, int(round(self.eps_decay_fraction * episodes)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> DqnConfig:
        fields = cls.__dataclass_fields__
        unknown = set(d) - set(fields)
        if unknown:
            raise ConfigError(f"unknown dqn config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            kind = fields[key].type
            kwargs[key] = int(value) if kind == "int" else float(value) if kind == "float" else value
        return cls(**kwargs)


def masked_max(q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, q, -np.inf).max(axis=-1)


def td_target(reward, next_q, next_mask, done, gamma: float):
    """``r`` on terminal transitions, else ``r + gamma * max_valid Q'(o', .)``.

    Works elementwise on batches; ``next_q`` is never read where ``done``.
    """
    reward = np.asarray(reward, dtype=np.float64)
    done = np.asarray(done, dtype=bool)
    if np.ndim(done) == 0 and done:
        return reward
    boot = masked_max(np.asarray(next_q), np.asarray(next_mask))
    return np.where(done, reward, reward + gamma * np.where(done, 0.0, boot))


def q_loss(batch: Batch, q, target_q, gamma: float):
    """Mean squared TD error. Returns ``(loss, grads)``; the target is a constant."""
    next_q, _ = target_q.forward(batch.next_obs)
    y = td_target(batch.rewards, next_q, batch.next_obs["mask"], batch.dones, gamma)
    q_taken, cache = q.forward(batch.obs, batch.actions)
    err = q_taken - y
    loss = float(np.mean(err**2))
    return loss, q.backward(cache, 2.0 * err / len(batch))


def sync_target(q, target_q) -> None:
    target_q.copy_from(q)


def epsilon_greedy(q_values: np.ndarray, valid_mask: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Uniform over valid actions with probability ``eps``, else masked argmax.

    Ties go to the lowest index. Always consumes exactly two draws from
    ``rng`` so trajectories do not shift when ``eps`` changes.
    """
    valid = np.flatnonzero(valid_mask)
    if valid.size == 0:
        raise NoValidAction("no valid action available")
    explore = rng.random() < eps
    pick = rng.integers(valid.size)
    if explore:
        return int(valid[pick])
    return int(valid[np.argmax(np.asarray(q_values)[valid])])


def batch1(obs: dict) -> dict:
    return {k: np.asarray(v)[None] for k, v in obs.items()}


def greedy_q(q, obs: dict) -> np.ndarray:
    return q.forward(batch1(obs))[0][0]


class DqnLearner:
    """Online/target pair, optimiser and replay buffer for one Q-network."""

    def __init__(self, q, config: DqnConfig, rng: np.random.Generator):
        self.q = q
        self.target = q.clone()
        self.config = config
        self.rng = rng
        self.buffer = ReplayBuffer(config.buffer_capacity, rng)
        self.adam = AdamState(lr=config.lr)
        self.updates = 0

    def observe(self, tr: Transition) -> float | None:
        """Store a transition and take one gradient step once warm."""
        self.buffer.push(tr)
        cfg = self.config
        if len(self.buffer) < max(cfg.warmup, cfg.batch_size):
            return None
        batch = self.buffer.sample(cfg.batch_size)
        loss, grads = q_loss(batch, self.q, self.target, cfg.gamma)
        if not np.isfinite(loss):
            raise NumericalError(f"loss became {loss} after {self.updates} updates")
        adam_update(self.q.params(), grads, self.adam)
        self.updates += 1
        if self.updates % cfg.target_sync_interval == 0:
            sync_target(self.q, self.target)
        return loss


@dataclass
class CurveRow:
    episode: int
    mean_epsilon: float
    episode_return: float
    loss_mean: float


EnvFactory = Callable[[int], NetworkPDEnv]


def _random_node(state: EnvState, rng: np.random.Generator) -> int:
    candidates = np.flatnonzero(state.valid.any(axis=1))
    return int(candidates[rng.integers(candidates.size)])


def _run(env_factory: EnvFactory, learner: DqnLearner, episodes: int, controller, rng) -> list[CurveRow]:
    schedule = learner.config.schedule(episodes)
    scale = learner.config.reward_scale
    curve = []
    for ep in range(episodes):
        eps = schedule(ep)
        env = env_factory(ep)
        state = env.reset()
        obs = controller.begin(state, rng)
        done, ret, losses = False, 0.0, []
        while not done:
            a = epsilon_greedy(greedy_q(learner.q, obs), obs["mask"], eps, rng)
            state, reward, done = env.step(controller.env_action(state, obs, a, rng))
            next_obs = controller.begin(state, rng)
            loss = learner.observe(Transition(obs, a, reward * scale, next_obs, done))
            if loss is not None:
                losses.append(loss)
            ret += reward
            obs = next_obs
        curve.append(CurveRow(ep, eps, ret, float(np.mean(losses)) if losses else float("nan")))
        if (ep + 1) % 100 == 0:
            log.info("episode %d eps=%.3f return=%.2f", ep + 1, eps, ret)
    return curve


class _LinkPhase:
    """Phase one: the node is drawn uniformly, the link agent learns."""

    def __init__(self, link_agent):
        self.link = link_agent

    def begin(self, state, rng):
        return self.link.observe(state, _random_node(state, rng))

    def env_action(self, state, obs, a, rng):
        return int(obs["sel"]), a


class _NodePhase:
    def __init__(self, node_agent, link_agent):
        self.node = node_agent
        self.link = link_agent

    def begin(self, state, rng):
        return self.node.observe(state)

    def env_action(self, state, obs, a, rng):
        link_obs = self.link.observe(state, a)
        partner = epsilon_greedy(greedy_q(self.link, link_obs), link_obs["mask"], 0.0, rng)
        return a, partner


class _FlatPhase:
    def __init__(self, flat_agent):
        self.flat = flat_agent

    def begin(self, state, rng):
        return self.flat.observe(state)

    def env_action(self, state, obs, a, rng):
        return self.flat.pairs[a]


def train_phase1_link_agent(env_factory: EnvFactory, link_q, config: DqnConfig, episodes: int | None = None, rng=None):
    """Train the link agent in place against a uniformly random node agent.

    Returns the learning curve, one row per episode.
    """
    episodes = config.episodes if episodes is None else episodes
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    learner = DqnLearner(link_q, config, rng)
    return _run(env_factory, learner, episodes, _LinkPhase(link_q), rng)


def train_phase2_node_agent(env_factory: EnvFactory, frozen_link_q, node_q, config: DqnConfig, episodes: int | None = None, rng=None):
    """Train the node agent while the link agent answers greedily and never updates."""
    episodes = config.episodes if episodes is None else episodes
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    learner = DqnLearner(node_q, config, rng)
    return _run(env_factory, learner, episodes, _NodePhase(node_q, frozen_link_q), rng)


def train_flat_agent(env_factory: EnvFactory, flat_q, config: DqnConfig, episodes: int | None = None, rng=None):
    episodes = config.episodes if episodes is None else episodes
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    learner = DqnLearner(flat_q, config, rng)
    return _run(env_factory, learner, episodes, _FlatPhase(flat_q), rng)
