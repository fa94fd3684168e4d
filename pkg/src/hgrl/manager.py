"""The three system managers: hierarchical (node + link agents), flat DQN, random.

Every manager returns a ``(u, v)`` pair with ``u < v`` whose link is toggled.
Invalid toggles (self-loops, bridge deletions) are masked out before
selection, so no policy can ever emit one.
"""

from __future__ import annotations

import math

import numpy as np

from .env import EnvState
from .nn import GnnEncoder, Module, _affine, mean_aggregator, mlp, readout_concat
from .rl import epsilon_greedy, greedy_q

N_FEATURES = 4


def node_features(state: EnvState) -> np.ndarray:
    """Per node: one-hot type, degree / (n-1), last utility / (6 (n-1))."""
    n = state.n
    x = np.zeros((n, N_FEATURES))
    x[np.arange(n), state.types.astype(np.int64)] = 1.0
    x[:, 2] = state.adj.sum(axis=1) / (n - 1)
    x[:, 3] = state.last_utilities / (6.0 * (n - 1))
    return x


def node_mask(state: EnvState) -> np.ndarray:
    """Nodes with at least one valid partner (a star's centre has none)."""
    return state.valid.any(axis=1)


class NodeAgent(Module):
    """Two-layer GNN encoder with a shared per-node Q head."""

    def __init__(self, hidden: int = 64, n_layers: int = 2, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.hidden = hidden
        self.encoder = GnnEncoder([N_FEATURES] + [hidden] * n_layers, rng)
        self.head = mlp([hidden, hidden, 1], rng)

    def leaves(self):
        return self.encoder.leaves() + self.head.leaves()

    def observe(self, state: EnvState) -> dict:
        return {"x": node_features(state), "adj": state.adj.copy(), "mask": node_mask(state)}

    def forward(self, obs: dict, actions: np.ndarray | None = None):
        """Q for every node, shape (batch, n); or (batch,) for the given ``actions``."""
        rows = None if actions is None else np.asarray(actions)[:, None]
        h, enc_cache = self.encoder.forward(obs["x"], mean_aggregator(obs["adj"]), rows)
        q, head_cache = self.head.forward(h)
        q = q[..., 0]
        return (q if actions is None else q[:, 0]), (enc_cache, head_cache, actions)

    def backward(self, cache, dq: np.ndarray):
        enc_cache, head_cache, actions = cache
        if actions is not None:
            dq = dq[:, None]
        dh, head_grads = self.head.backward(head_cache, dq[..., None])
        _, enc_grads = self.encoder.backward(enc_cache, dh)
        return enc_grads + head_grads


class LinkAgent(Module):
    """Scores every partner ``v`` of a selected node ``s``.

    A dedicated GNN embeds all nodes; for each candidate the head sees
    ``[h_s, h_v, adj[s, v]]``, so one shared head covers all ``n`` partners.
    The first head layer is evaluated blockwise so ``h_s`` is projected once.
    """

    def __init__(self, hidden: int = 64, n_layers: int = 2, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(1)
        self.hidden = hidden
        self.encoder = GnnEncoder([N_FEATURES] + [hidden] * n_layers, rng)
        self.head = mlp([2 * hidden + 1, hidden, 1], rng)

    def leaves(self):
        return self.encoder.leaves() + self.head.leaves()

    def observe(self, state: EnvState, selected: int) -> dict:
        return {
            "x": node_features(state),
            "adj": state.adj.copy(),
            "sel": np.int64(selected),
            "mask": state.valid[selected].copy(),
        }

    def forward(self, obs: dict, actions: np.ndarray | None = None):
        adj = obs["adj"]
        sel = np.asarray(obs["sel"], dtype=np.int64)
        batch = np.arange(adj.shape[0])
        if actions is None:
            h, enc_cache = self.encoder.forward(obs["x"], mean_aggregator(adj))
            cand = np.arange(adj.shape[1])[None, :]
            h_sel, h_cand = h[batch, sel], h
        else:
            # only the selected node and the taken partner are needed
            cand = np.asarray(actions)[:, None]
            h, enc_cache = self.encoder.forward(obs["x"], mean_aggregator(adj), np.concatenate([sel[:, None], cand], 1))
            h_sel, h_cand = h[:, 0], h[:, 1:]
        bit = adj[batch[:, None], sel[:, None], cand].astype(np.float64)
        first, second = self.head.layers
        d = self.hidden
        W = first.W
        pre = _affine(h_cand, W[:, d : 2 * d], first.b)
        pre += (h_sel @ W[:, :d].T)[:, None, :]
        pre += bit[..., None] * W[:, 2 * d]
        np.maximum(pre, 0.0, out=pre)
        q, out_cache = second.forward(pre)
        q = q[..., 0]
        if actions is not None:
            q = q[:, 0]
        cache = (enc_cache, out_cache, sel, actions, h_sel, h_cand, bit, pre)
        return q, cache

    def backward(self, cache, dq: np.ndarray):
        enc_cache, out_cache, sel, actions, h_sel, h_cand, bit, pre = cache
        if actions is not None:
            dq = dq[:, None]
        first, second = self.head.layers
        d = self.hidden
        W = first.W
        dz, out_grads = second.backward(out_cache, dq[..., None])
        dpre = dz * (pre > 0)
        dpre_sum = dpre.sum(axis=1)
        dW = np.empty_like(W)
        dW[:, :d] = dpre_sum.T @ h_sel
        dW[:, d : 2 * d] = dpre.reshape(-1, W.shape[0]).T @ h_cand.reshape(-1, d)
        dW[:, 2 * d] = np.einsum("bko,bk->o", dpre, bit)
        db = dpre.sum(axis=(0, 1))
        dh_cand = (dpre.reshape(-1, W.shape[0]) @ W[:, d : 2 * d]).reshape(h_cand.shape)
        d_sel = dpre_sum @ W[:, :d]
        if actions is None:
            dh = dh_cand
            dh[np.arange(dh.shape[0]), sel] += d_sel
        else:
            dh = np.concatenate([d_sel[:, None], dh_cand], 1)
        _, enc_grads = self.encoder.backward(enc_cache, dh)
        return enc_grads + [dW, db] + out_grads


def hgrl_param_count(hidden: int = 64, n_layers: int = 2) -> int:
    gnn = N_FEATURES * hidden * 2 + hidden + (n_layers - 1) * (2 * hidden * hidden + hidden)
    node_head = hidden * hidden + hidden + hidden + 1
    link_head = (2 * hidden + 1) * hidden + hidden + hidden + 1
    return 2 * gnn + node_head + link_head


def flat_param_count(n: int, hidden: int) -> int:
    n_pairs = n * (n - 1) // 2
    d_in = n_pairs + N_FEATURES * n
    return d_in * hidden + hidden + hidden * hidden + hidden + hidden * n_pairs + n_pairs


def flat_hidden_for(n: int, target_params: int) -> int:
    """Hidden width that brings the flat network closest to ``target_params``."""
    n_pairs = n * (n - 1) // 2
    d_in = n_pairs + N_FEATURES * n
    b = d_in + n_pairs + 2
    c = n_pairs - target_params
    h = (-b + math.sqrt(b * b - 4 * c)) / 2
    candidates = [max(1, math.floor(h)), max(1, math.ceil(h))]
    return min(candidates, key=lambda w: abs(flat_param_count(n, w) - target_params))


class FlatAgent(Module):
    """Dense Q-network over all ``n(n-1)/2`` pair toggles.

    Observation: upper-triangle adjacency bits followed by the per-node
    features concatenated in node order. Not permutation invariant.
    """

    def __init__(self, n: int, hidden: int | None = None, rng: np.random.Generator | None = None, match_hidden: int = 64):
        rng = rng if rng is not None else np.random.default_rng(2)
        self.n = n
        self.pairs = [(int(u), int(v)) for u, v in zip(*np.triu_indices(n, k=1))]
        self._iu = np.triu_indices(n, k=1)
        n_pairs = len(self.pairs)
        self.obs_dim = n_pairs + N_FEATURES * n
        self.hidden = hidden if hidden is not None else flat_hidden_for(n, hgrl_param_count(match_hidden))
        self.net = mlp([self.obs_dim, self.hidden, self.hidden, n_pairs], rng)

    def leaves(self):
        return self.net.leaves()

    @property
    def n_actions(self) -> int:
        return len(self.pairs)

    def observe(self, state: EnvState) -> dict:
        flat = np.concatenate([state.adj[self._iu].astype(np.float64), readout_concat(node_features(state))])
        return {"flat": flat, "mask": state.valid[self._iu]}

    def forward(self, obs: dict, actions: np.ndarray | None = None):
        q, cache = self.net.forward(obs["flat"])
        if actions is None:
            return q, (cache, None)
        return q[np.arange(q.shape[0]), actions], (cache, (q.shape, actions))

    def backward(self, cache, dq: np.ndarray):
        net_cache, picked = cache
        if picked is not None:
            shape, actions = picked
            full = np.zeros(shape)
            full[np.arange(shape[0]), actions] = dq
            dq = full
        return self.net.backward(net_cache, dq, need_input_grad=False)[1]


def node_q_values(node_agent: NodeAgent, state: EnvState) -> np.ndarray:
    return greedy_q(node_agent, node_agent.observe(state))


def link_q_values(link_agent: LinkAgent, state: EnvState, selected: int) -> tuple[np.ndarray, np.ndarray]:
    """Q per partner plus the validity mask (self and bridge deletions are False)."""
    obs = link_agent.observe(state, selected)
    return greedy_q(link_agent, obs), obs["mask"]


def _pair(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


def hgrl_act(node_agent, link_agent, state: EnvState, eps_node: float, eps_link: float, rng) -> tuple[int, int]:
    """Pick the endpoint with the node agent, then its partner with the link agent (K=1)."""
    u = epsilon_greedy(node_q_values(node_agent, state), node_mask(state), eps_node, rng)
    q_link, mask = link_q_values(link_agent, state, u)
    v = epsilon_greedy(q_link, mask, eps_link, rng)
    return _pair(u, v)


def flat_act(flat_agent: FlatAgent, state: EnvState, eps: float, rng) -> tuple[int, int]:
    obs = flat_agent.observe(state)
    a = epsilon_greedy(greedy_q(flat_agent, obs), obs["mask"], eps, rng)
    return flat_agent.pairs[a]


def random_act(state: EnvState, rng) -> tuple[int, int]:
    us, vs = np.nonzero(np.triu(state.valid, k=1))
    i = rng.integers(us.size)
    return int(us[i]), int(vs[i])


class HgrlManager:
    kind = "hgrl"

    def __init__(self, node_agent: NodeAgent, link_agent: LinkAgent, eps_node: float = 0.0, eps_link: float = 0.0):
        self.node_agent, self.link_agent = node_agent, link_agent
        self.eps_node, self.eps_link = eps_node, eps_link

    def act(self, state, rng):
        return hgrl_act(self.node_agent, self.link_agent, state, self.eps_node, self.eps_link, rng)


class FlatManager:
    kind = "flat"

    def __init__(self, flat_agent: FlatAgent, eps: float = 0.0):
        self.flat_agent, self.eps = flat_agent, eps

    def act(self, state, rng):
        return flat_act(self.flat_agent, state, self.eps, rng)


class RandomManager:
    kind = "random"

    def act(self, state, rng):
        return random_act(state, rng)
