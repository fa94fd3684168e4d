from __future__ import annotations

import numpy as np
import pytest

from hgrl import graph
from hgrl.env import EnvConfig, NetworkPDEnv, initial_state, letters_to_types, valid_actions
from hgrl.manager import (
    FlatAgent,
    FlatManager,
    HgrlManager,
    LinkAgent,
    NodeAgent,
    RandomManager,
    flat_act,
    flat_hidden_for,
    flat_param_count,
    hgrl_act,
    hgrl_param_count,
    link_q_values,
    node_features,
    node_mask,
    node_q_values,
    random_act,
)
from hgrl.rl import Batch, batch1, epsilon_greedy, q_loss

import oracles


def state_from(adj, letters, utilities=None):
    cfg = EnvConfig(n=adj.shape[0])
    s = initial_state(cfg, np.random.default_rng(0))
    types = letters_to_types(letters)
    util = np.zeros(adj.shape[0]) if utilities is None else np.asarray(utilities, dtype=float)
    return type(s)(adj.copy(), types, util, types.copy(), 0, cfg.horizon)


def random_state(n, rng):
    adj = oracles.random_connected_graph(n, rng.uniform(0.2, 0.9), rng)
    types = rng.integers(0, 2, n).astype(np.int8)
    return state_from(adj, "".join("CD"[t] for t in types), rng.normal(size=n))


def test_node_features_layout():
    adj = graph.from_edges(3, [(0, 1), (1, 2)])
    x = node_features(state_from(adj, "CDC", [-4.0, 0.0, -8.0]))
    assert x[:, :2].tolist() == [[1, 0], [0, 1], [1, 0]]
    assert x[:, 2].tolist() == [0.5, 1.0, 0.5]
    assert x[:, 3].tolist() == [-4 / 12, 0.0, -8 / 12]


def test_node_q_values_equivariant_under_relabeling():
    rng = np.random.default_rng(0)
    agent = NodeAgent(16, rng=rng)
    s = random_state(8, rng)
    perm = rng.permutation(8)
    sp = state_from(s.adj[np.ix_(perm, perm)], "".join("CD"[t] for t in s.types[perm]), s.last_utilities[perm])
    q, qp = node_q_values(agent, s), node_q_values(agent, sp)
    assert q.shape == (8,)
    np.testing.assert_allclose(qp, q[perm], atol=1e-12)


def test_symmetric_nodes_get_equal_q():
    agent = NodeAgent(16, rng=np.random.default_rng(1))
    star = graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    q = node_q_values(agent, state_from(star, "CDDD", [-12.0, 0.0, 0.0, 0.0]))
    assert q[1] == q[2] == q[3]


def test_link_q_values_mask_and_length():
    agent = LinkAgent(16, rng=np.random.default_rng(2))
    path = graph.from_edges(3, [(0, 1), (1, 2)])
    q, mask = link_q_values(agent, state_from(path, "CCC"), 0)
    assert q.shape == (3,)
    assert mask.tolist() == [False, False, True]
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = random_state(7, rng)
        sel = int(rng.integers(7))
        q, mask = link_q_values(agent, s, sel)
        assert len(q) == 7 and not mask[sel]


def test_node_forward_taken_actions_match_full():
    rng = np.random.default_rng(12)
    agent = NodeAgent(8, rng=rng)
    obs = [agent.observe(random_state(6, rng)) for _ in range(5)]
    stacked = {k: np.stack([o[k] for o in obs]) for k in obs[0]}
    q_all, _ = agent.forward(stacked)
    acts = rng.integers(0, 6, 5)
    np.testing.assert_allclose(agent.forward(stacked, acts)[0], q_all[np.arange(5), acts], atol=1e-12)


def test_star_centre_is_masked_at_node_level():
    star = graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    assert node_mask(state_from(star, "CDDD")).tolist() == [False, True, True, True]


def test_link_forward_batch_matches_single_and_taken_actions():
    rng = np.random.default_rng(4)
    agent = LinkAgent(8, rng=rng)
    obs = [agent.observe(random_state(6, rng), int(rng.integers(6))) for _ in range(5)]
    stacked = {k: np.stack([o[k] for o in obs]) for k in obs[0]}
    q_all, _ = agent.forward(stacked)
    for i, o in enumerate(obs):
        np.testing.assert_allclose(q_all[i], agent.forward(batch1(o))[0][0], atol=1e-12)
    acts = rng.integers(0, 6, 5)
    np.testing.assert_allclose(agent.forward(stacked, acts)[0], q_all[np.arange(5), acts], atol=1e-12)


@pytest.mark.parametrize("kind", ["node", "link", "flat"])
def test_full_q_loss_gradients(kind):
    rng = np.random.default_rng(10)
    n = 5
    states = [random_state(n, rng) for _ in range(4)]
    nexts = [random_state(n, rng) for _ in range(4)]
    if kind == "node":
        q = NodeAgent(6, rng=rng)
        obs = [q.observe(s) for s in states]
        nxt = [q.observe(s) for s in nexts]
    elif kind == "link":
        q = LinkAgent(6, rng=rng)
        obs = [q.observe(s, int(rng.integers(n))) for s in states]
        nxt = [q.observe(s, int(rng.integers(n))) for s in nexts]
    else:
        q = FlatAgent(n, hidden=7, rng=rng)
        obs = [q.observe(s) for s in states]
        nxt = [q.observe(s) for s in nexts]
    stack = lambda os: {k: np.stack([o[k] for o in os]) for k in os[0]}  # noqa: E731
    actions = np.array([int(rng.choice(np.flatnonzero(o["mask"]))) for o in obs])
    batch = Batch(stack(obs), actions, rng.normal(size=4), stack(nxt), np.array([False, True, False, False]))
    target = q.clone()
    for p in target.params():
        p += rng.normal(size=p.shape) * 0.1
    _, grads = q_loss(batch, q, target, 0.9)
    numeric = oracles.finite_difference(lambda: q_loss(batch, q, target, 0.9)[0], q.params())
    for g, ng in zip(grads, numeric):
        assert oracles.rel_error(g, ng) <= 1e-4


def test_hgrl_greedy_is_deterministic_and_valid():
    rng = np.random.default_rng(5)
    node, link = NodeAgent(8, rng=rng), LinkAgent(8, rng=rng)
    s = random_state(8, rng)
    a1 = hgrl_act(node, link, s, 0.0, 0.0, np.random.default_rng(1))
    a2 = hgrl_act(node, link, s, 0.0, 0.0, np.random.default_rng(2))
    assert a1 == a2 and a1 in valid_actions(s.adj)


def test_hgrl_on_complete_graph_deletes():
    rng = np.random.default_rng(6)
    node, link = NodeAgent(8, rng=rng), LinkAgent(8, rng=rng)
    s = state_from(~np.eye(6, dtype=bool), "CCDDCD")
    for eps in (0.0, 0.5, 1.0):
        u, v = hgrl_act(node, link, s, eps, eps, rng)
        assert s.adj[u, v]


def test_greedy_choice_invariant_to_monotone_transform():
    rng = np.random.default_rng(7)
    q = rng.normal(size=9)
    mask = rng.random(9) < 0.6
    mask[0] = True
    base = epsilon_greedy(q, mask, 0.0, rng)
    assert epsilon_greedy(np.exp(3 * q) + 7, mask, 0.0, rng) == base
    assert epsilon_greedy(np.tanh(q), mask, 0.0, rng) == base


def test_flat_agent_shapes():
    agent = FlatAgent(10, rng=np.random.default_rng(0))
    s = random_state(10, np.random.default_rng(1))
    obs = agent.observe(s)
    assert agent.n_actions == 45
    assert obs["flat"].shape == (45 + 40,)
    assert obs["mask"].shape == (45,)
    u, v = flat_act(agent, s, 0.0, np.random.default_rng(0))
    assert (u, v) in valid_actions(s.adj)


def test_parameter_counts_are_matched():
    assert hgrl_param_count(64) == NodeAgent(64).n_params() + LinkAgent(64).n_params()
    for n in (10, 20):
        flat = FlatAgent(n)
        assert flat.n_params() == flat_param_count(n, flat.hidden)
        assert abs(flat.n_params() - hgrl_param_count(64)) / hgrl_param_count(64) <= 0.2
    assert flat_hidden_for(10, hgrl_param_count(64)) == 120


def test_random_act_examples():
    rng = np.random.default_rng(8)
    path = state_from(graph.from_edges(3, [(0, 1), (1, 2)]), "CCC")
    assert {random_act(path, rng) for _ in range(50)} == {(0, 2)}
    tri = state_from(graph.from_edges(3, [(0, 1), (1, 2), (0, 2)]), "CCC")
    picks = [random_act(tri, rng) for _ in range(10_000)]
    counts = np.array([picks.count(a) for a in [(0, 1), (0, 2), (1, 2)]])
    chi2 = (((counts - 10_000 / 3) ** 2) / (10_000 / 3)).sum()
    assert counts.sum() == 10_000 and chi2 < 13.82  # 2 dof, p = 0.001


def test_managers_share_interface():
    rng = np.random.default_rng(9)
    env = NetworkPDEnv(EnvConfig(n=6, horizon=5), rng)
    s = env.reset()
    managers = [
        HgrlManager(NodeAgent(8, rng=rng), LinkAgent(8, rng=rng)),
        FlatManager(FlatAgent(6, hidden=8, rng=rng)),
        RandomManager(),
    ]
    assert [m.kind for m in managers] == ["hgrl", "flat", "random"]
    for m in managers:
        assert m.act(s, rng) in valid_actions(s.adj)
