"""Repeated Prisoner's Dilemma on an evolving, always-connected graph.

One environment step is: the manager toggles one link, every agent plays
PD against each neighbour, then agents imitate better-off neighbours.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import graph


class ConfigError(ValueError):
    """Invalid configuration values."""


class InvalidAction(ValueError):
    """A toggle that would create a self-loop or disconnect the graph."""


class AgentType(enum.IntEnum):
    COOPERATOR = 0
    DEFECTOR = 1

    @property
    def letter(self) -> str:
        return "C" if self is AgentType.COOPERATOR else "D"


C = AgentType.COOPERATOR
D = AgentType.DEFECTOR


def types_to_letters(types) -> list[str]:
    return ["C" if t == C else "D" for t in types]


def letters_to_types(letters) -> np.ndarray:
    lookup = {"C": int(C), "D": int(D)}
    return np.array([lookup[x] for x in letters], dtype=np.int8)


@dataclass(frozen=True)
class PayoffMatrix:
    """Symmetric two-player payoffs, stored as (row_utility, col_utility)."""

    cc: tuple[float, float] = (-0.5, -0.5)
    cd: tuple[float, float] = (-4.0, 0.0)
    dd: tuple[float, float] = (-3.0, -3.0)

    def __post_init__(self):
        if self.cc[0] != self.cc[1] or self.dd[0] != self.dd[1]:
            raise ConfigError("CC and DD payoffs must be equal for both players")

    def payoff(self, row: AgentType, col: AgentType) -> tuple[float, float]:
        if row == C and col == C:
            return tuple(self.cc)
        if row == D and col == D:
            return tuple(self.dd)
        if row == C:
            return tuple(self.cd)
        return (self.cd[1], self.cd[0])

    @cached_property
    def row_matrix(self) -> np.ndarray:
        """``M[a, b]`` is the utility of a type-``a`` player facing type ``b``."""
        return np.array(
            [[self.cc[0], self.cd[0]], [self.cd[1], self.dd[0]]], dtype=np.float64
        )

    def to_dict(self) -> dict:
        return {"CC": list(self.cc), "CD": list(self.cd), "DD": list(self.dd)}

    @classmethod
    def from_dict(cls, d: dict) -> PayoffMatrix:
        return cls(
            cc=tuple(float(x) for x in d["CC"]),
            cd=tuple(float(x) for x in d["CD"]),
            dd=tuple(float(x) for x in d["DD"]),
        )


@dataclass(frozen=True)
class EnvConfig:
    n: int = 10
    p_edge: float = 0.5
    p_imitate: float = 0.0
    horizon: int = 50
    payoff: PayoffMatrix = field(default_factory=PayoffMatrix)
    cooperator_fraction_init: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError(f"n must be >= 3, got {self.n}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        for name in ("p_edge", "p_imitate", "cooperator_fraction_init"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.p_edge == 0.0:
            raise ConfigError("p_edge must be > 0 to produce a connected graph")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "p_edge": self.p_edge,
            "p_imitate": self.p_imitate,
            "horizon": self.horizon,
            "payoff": self.payoff.to_dict(),
            "cooperator_fraction_init": self.cooperator_fraction_init,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EnvConfig:
        known = {"n", "p_edge", "p_imitate", "horizon", "payoff", "cooperator_fraction_init", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown env config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "payoff" in kwargs:
            kwargs["payoff"] = PayoffMatrix.from_dict(kwargs["payoff"])
        for key in ("n", "horizon", "seed"):
            if key in kwargs:
                kwargs[key] = int(kwargs[key])
        for key in ("p_edge", "p_imitate", "cooperator_fraction_init"):
            if key in kwargs:
                kwargs[key] = float(kwargs[key])
        return cls(**kwargs)


@dataclass
class EnvState:
    """POMDP state. Treated as immutable; ``env_step`` returns a new one.

    ``played_types`` are the types that earned ``last_utilities``; ``types``
    already include the imitation that followed that round.
    """

    adj: np.ndarray
    types: np.ndarray
    last_utilities: np.ndarray
    played_types: np.ndarray
    t: int
    horizon: int

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @cached_property
    def valid(self) -> np.ndarray:
        """``valid[u, v]`` is True when toggling (u, v) keeps the graph connected."""
        return valid_toggle_matrix(self.adj)

    @property
    def done(self) -> bool:
        return self.t >= self.horizon


def init_network(n: int, p_edge: float, rng: np.random.Generator, max_tries: int = 10_000) -> np.ndarray:
    """Erdos-Renyi G(n, p_edge), resampled whole until connected."""
    if n < 3 or not 0.0 < p_edge <= 1.0:
        raise ConfigError(f"need n >= 3 and p_edge in (0, 1], got n={n}, p_edge={p_edge}")
    for _ in range(max_tries):
        upper = np.triu(rng.random((n, n)) < p_edge, k=1)
        adj = upper | upper.T
        if graph.is_connected(adj):
            return adj
    raise ConfigError(f"no connected G({n}, {p_edge}) after {max_tries} draws")


def init_types(n: int, frac_coop: float, rng: np.random.Generator) -> np.ndarray:
    coop = rng.random(n) < frac_coop
    return np.where(coop, int(C), int(D)).astype(np.int8)


def play_round(adj: np.ndarray, types: np.ndarray, payoff: PayoffMatrix) -> np.ndarray:
    """Per-agent utility summed over all neighbours."""
    pairwise = payoff.row_matrix[types[:, None], types[None, :]]
    return np.where(adj, pairwise, 0.0).sum(axis=1)


def social_welfare(utilities: np.ndarray) -> float:
    return float(np.sum(utilities))


def edge_census(adj: np.ndarray, types: np.ndarray) -> tuple[int, int, int]:
    """Counts of (CC, CD, DD) edges."""
    upper = np.triu(adj, k=1)
    is_d = types.astype(bool)
    n_d = is_d[:, None].astype(np.int64) + is_d[None, :].astype(np.int64)
    return (
        int(np.sum(upper & (n_d == 0))),
        int(np.sum(upper & (n_d == 1))),
        int(np.sum(upper & (n_d == 2))),
    )


def valid_toggle_matrix(adj: np.ndarray) -> np.ndarray:
    # every non-self pair is valid except deleting a bridge
    valid = ~np.eye(adj.shape[0], dtype=bool)
    for u, v in graph.bridges(adj):
        valid[u, v] = valid[v, u] = False
    return valid


def valid_actions(adj: np.ndarray) -> list[tuple[int, int]]:
    """All connectivity-preserving toggles as sorted ``(u, v)`` with ``u < v``."""
    us, vs = np.nonzero(np.triu(valid_toggle_matrix(adj), k=1))
    return list(zip(us.tolist(), vs.tolist()))


def apply_intervention(adj: np.ndarray, action: tuple[int, int]) -> np.ndarray:
    u, v = int(action[0]), int(action[1])
    n = adj.shape[0]
    if u == v:
        raise InvalidAction(f"self-loop toggle ({u}, {v})")
    if not (0 <= u < n and 0 <= v < n):
        raise InvalidAction(f"node out of range in ({u}, {v})")
    out = adj.copy()
    out[u, v] = out[v, u] = not adj[u, v]
    if adj[u, v] and not graph.is_connected(out):
        raise InvalidAction(f"deleting ({u}, {v}) disconnects the graph")
    return out


def imitation_step(
    adj: np.ndarray,
    types: np.ndarray,
    last_utilities: np.ndarray,
    p_imitate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Synchronous social learning.

    Each agent, with probability ``p_imitate``, looks at one uniformly chosen
    neighbour and copies its type if that neighbour did strictly better.
    """
    n = adj.shape[0]
    new_types = types.copy()
    coins = rng.random(n)
    for i in range(n):
        if coins[i] >= p_imitate:
            continue
        nbrs = np.flatnonzero(adj[i])
        if nbrs.size == 0:
            continue
        j = nbrs[rng.integers(nbrs.size)]
        if last_utilities[j] > last_utilities[i]:
            new_types[i] = types[j]
    return new_types


def initial_state(config: EnvConfig, rng: np.random.Generator) -> EnvState:
    adj = init_network(config.n, config.p_edge, rng)
    types = init_types(config.n, config.cooperator_fraction_init, rng)
    utilities = play_round(adj, types, config.payoff)
    return EnvState(adj, types, utilities, types.copy(), 0, config.horizon)


def env_step(
    state: EnvState, action: tuple[int, int], config: EnvConfig, rng: np.random.Generator
) -> tuple[EnvState, float, bool]:
    """Intervene, play, imitate. Reward is per-agent welfare of the round."""
    if state.t >= state.horizon:
        raise RuntimeError("episode is over; reset the environment")
    adj = apply_intervention(state.adj, action)
    utilities = play_round(adj, state.types, config.payoff)
    new_types = imitation_step(adj, state.types, utilities, config.p_imitate, rng)
    t = state.t + 1
    next_state = EnvState(adj, new_types, utilities, state.types, t, state.horizon)
    reward = social_welfare(utilities) / state.n
    return next_state, reward, t == state.horizon


class NetworkPDEnv:
    """Stateful wrapper owning one RNG stream and the current state."""

    def __init__(self, config: EnvConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.state: EnvState | None = None

    def reset(self) -> EnvState:
        self.state = initial_state(self.config, self.rng)
        return self.state

    def step(self, action: tuple[int, int]) -> tuple[EnvState, float, bool]:
        if self.state is None:
            raise RuntimeError("call reset() first")
        self.state, reward, done = env_step(self.state, action, self.config, self.rng)
        return self.state, reward, done
