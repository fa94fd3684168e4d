from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hgrl import graph
from hgrl.env import (
    C,
    D,
    ConfigError,
    EnvConfig,
    InvalidAction,
    NetworkPDEnv,
    PayoffMatrix,
    apply_intervention,
    edge_census,
    env_step,
    imitation_step,
    init_network,
    init_types,
    initial_state,
    letters_to_types,
    play_round,
    social_welfare,
    valid_actions,
)

import oracles

PAYOFF = PayoffMatrix()


def path3():
    return graph.from_edges(3, [(0, 1), (1, 2)])


def triangle():
    return graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])


def complete(n):
    return ~np.eye(n, dtype=bool)


@st.composite
def connected_graphs(draw, min_n=3, max_n=9):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    p = draw(st.floats(0.15, 1.0))
    rng = np.random.default_rng(seed)
    return oracles.random_connected_graph(n, p, rng), rng


# graph utilities


@settings(max_examples=150, deadline=None)
@given(connected_graphs())
def test_bridges_match_brute_force(g):
    adj, _ = g
    assert graph.bridges(adj) == oracles.bridges_brute(adj)


@settings(max_examples=150, deadline=None)
@given(connected_graphs())
def test_diameter_matches_floyd(g):
    adj, _ = g
    assert graph.diameter(adj) == oracles.diameter_floyd(adj)


def test_diameter_rejects_disconnected():
    with pytest.raises(graph.DisconnectedGraphError):
        graph.diameter(graph.from_edges(4, [(0, 1), (2, 3)]))


def test_bfs_distances_unreachable():
    d = graph.bfs_distances(graph.from_edges(4, [(0, 1), (2, 3)]), 0)
    assert d.tolist() == [0, 1, -1, -1]


# init


def test_init_network_forced_triangle():
    adj = init_network(3, 1.0, np.random.default_rng(0))
    assert (adj == triangle()).all()


def test_init_network_is_connected_symmetric_and_loopless():
    rng = np.random.default_rng(5)
    for _ in range(200):
        adj = init_network(10, 0.5, rng)
        assert graph.is_connected(adj)
        assert (adj == adj.T).all() and not adj.diagonal().any()


def test_init_network_deterministic():
    a = init_network(10, 0.5, np.random.default_rng(42))
    b = init_network(10, 0.5, np.random.default_rng(42))
    assert (a == b).all()


def test_init_network_edge_count_near_expectation():
    # conditioning on connectivity shifts the mean slightly upward from 22.5
    rng = np.random.default_rng(1)
    counts = [init_network(10, 0.5, rng).sum() // 2 for _ in range(2000)]
    assert 22.0 < np.mean(counts) < 24.0


def test_init_network_rejects_bad_args():
    with pytest.raises(ConfigError):
        init_network(2, 0.5, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        init_network(5, 0.0, np.random.default_rng(0))


def test_init_types_forced():
    assert init_types(4, 1.0, np.random.default_rng(0)).tolist() == [C] * 4
    assert init_types(4, 0.0, np.random.default_rng(0)).tolist() == [D] * 4


def test_init_types_binomial_concentration():
    coop = int((init_types(1000, 0.5, np.random.default_rng(3)) == C).sum())
    assert abs(coop - 500) <= 5 * np.sqrt(250)


# payoffs and welfare


def test_play_round_payoff_table():
    edge = graph.from_edges(2, [(0, 1)])
    assert play_round(edge, letters_to_types("CC"), PAYOFF).tolist() == [-0.5, -0.5]
    assert play_round(edge, letters_to_types("CD"), PAYOFF).tolist() == [-4.0, 0.0]
    assert play_round(path3(), letters_to_types("DDD"), PAYOFF).tolist() == [-3.0, -6.0, -3.0]


def test_social_welfare_examples():
    assert social_welfare(play_round(triangle(), letters_to_types("CCC"), PAYOFF)) == -3.0
    assert social_welfare(play_round(graph.from_edges(2, [(0, 1)]), letters_to_types("CD"), PAYOFF)) == -4.0
    star = graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    assert social_welfare(play_round(star, letters_to_types("CDDD"), PAYOFF)) == -12.0


def test_payoff_lookup_symmetry():
    assert PAYOFF.payoff(C, D) == (-4.0, 0.0)
    assert PAYOFF.payoff(D, C) == (0.0, -4.0)
    assert PayoffMatrix.from_dict(PAYOFF.to_dict()) == PAYOFF


@settings(max_examples=200, deadline=None)
@given(connected_graphs(max_n=12), st.integers(0, 2**32 - 1))
def test_welfare_equals_edge_census(g, seed):
    adj, _ = g
    types = np.random.default_rng(seed).integers(0, 2, adj.shape[0]).astype(np.int8)
    cc, cd, dd = edge_census(adj, types)
    assert cc + cd + dd == adj.sum() // 2
    assert social_welfare(play_round(adj, types, PAYOFF)) == -(cc + 4 * cd + 6 * dd)


# actions


def test_valid_actions_examples():
    assert valid_actions(path3()) == [(0, 2)]
    assert valid_actions(triangle()) == [(0, 1), (0, 2), (1, 2)]
    k4 = complete(4)
    assert valid_actions(k4) == [(u, v) for u in range(4) for v in range(u + 1, 4)]


@settings(max_examples=100, deadline=None)
@given(connected_graphs())
def test_valid_actions_are_exactly_the_connectivity_preserving_toggles(g):
    adj, _ = g
    n = adj.shape[0]
    expected = []
    for u in range(n):
        for v in range(u + 1, n):
            h = adj.copy()
            h[u, v] = h[v, u] = not adj[u, v]
            if oracles.is_connected_bfs(h):
                expected.append((u, v))
    assert valid_actions(adj) == expected


def test_apply_intervention_examples():
    assert (apply_intervention(path3(), (0, 2)) == triangle()).all()
    assert (apply_intervention(triangle(), (0, 1)) == graph.from_edges(3, [(0, 2), (1, 2)])).all()
    with pytest.raises(InvalidAction):
        apply_intervention(path3(), (0, 1))
    with pytest.raises(InvalidAction):
        apply_intervention(path3(), (1, 1))
    with pytest.raises(InvalidAction):
        apply_intervention(path3(), (0, 3))


def test_apply_intervention_does_not_mutate():
    adj = triangle()
    apply_intervention(adj, (0, 1))
    assert (adj == triangle()).all()


# imitation


@settings(max_examples=100, deadline=None)
@given(connected_graphs(), st.integers(0, 2**32 - 1))
def test_no_imitation_at_p_zero(g, seed):
    adj, rng = g
    types = rng.integers(0, 2, adj.shape[0]).astype(np.int8)
    util = play_round(adj, types, PAYOFF)
    assert (imitation_step(adj, types, util, 0.0, np.random.default_rng(seed)) == types).all()


def test_cooperator_copies_better_defector():
    edge = graph.from_edges(2, [(0, 1)])
    new = imitation_step(edge, letters_to_types("CD"), np.array([-4.0, 0.0]), 1.0, np.random.default_rng(0))
    assert new.tolist() == [D, D]


def test_equal_utilities_never_copy():
    edge = graph.from_edges(2, [(0, 1)])
    types = letters_to_types("CD")
    new = imitation_step(edge, types, np.array([-1.0, -1.0]), 1.0, np.random.default_rng(0))
    assert (new == types).all()


def test_imitation_is_synchronous():
    # the middle copies the right end and the left end copies the middle's OLD type
    adj = path3()
    types = letters_to_types("DCD")
    util = np.array([-10.0, -5.0, 0.0])
    rng = np.random.default_rng(0)
    for _ in range(50):
        new = imitation_step(adj, types, util, 1.0, rng)
        assert new[0] == C
        assert new[2] == D


def test_imitation_copies_each_neighbour_uniformly():
    star = graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    types = letters_to_types("CDDC")
    util = np.array([-5.0, 0.0, 0.0, 0.0])
    rng = np.random.default_rng(2)
    defect = np.mean([imitation_step(star, types, util, 1.0, rng)[0] == D for _ in range(6000)])
    assert abs(defect - 2 / 3) < 0.03


# stepping


def test_env_step_closing_triangle_reward():
    cfg = EnvConfig(n=3, horizon=5)
    types = letters_to_types("CCC")
    state = initial_state(cfg, np.random.default_rng(0))
    state.adj[...] = path3()
    state.types[...] = types
    nxt, reward, done = env_step(state, (0, 2), cfg, np.random.default_rng(0))
    assert reward == -1.0 and not done
    assert (nxt.adj == triangle()).all() and nxt.t == 1


def test_env_step_horizon_one_is_done():
    cfg = EnvConfig(n=5, horizon=1)
    env = NetworkPDEnv(cfg, np.random.default_rng(0))
    state = env.reset()
    _, _, done = env.step(valid_actions(state.adj)[0])
    assert done
    with pytest.raises(RuntimeError):
        env.step(valid_actions(env.state.adj)[0])


def test_env_step_rejects_invalid_action():
    cfg = EnvConfig(n=4, horizon=5)
    state = initial_state(cfg, np.random.default_rng(0))
    with pytest.raises(InvalidAction):
        env_step(state, (1, 1), cfg, np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.5, 1.0]))
def test_episode_invariants(seed, p):
    cfg = EnvConfig(n=8, horizon=20, p_imitate=p)
    rng = np.random.default_rng(seed)
    env = NetworkPDEnv(cfg, rng)
    state = env.reset()
    done = False
    while not done:
        prev_types = state.types
        acts = valid_actions(state.adj)
        state, reward, done = env.step(acts[rng.integers(len(acts))])
        assert graph.is_connected(state.adj)
        assert (state.played_types == prev_types).all()
        assert reward == social_welfare(play_round(state.adj, state.played_types, cfg.payoff)) / cfg.n
        if p == 0.0:
            assert (state.types == prev_types).all()
    assert state.t == cfg.horizon


def test_reset_is_deterministic():
    cfg = EnvConfig()
    a = NetworkPDEnv(cfg, np.random.default_rng(9)).reset()
    b = NetworkPDEnv(cfg, np.random.default_rng(9)).reset()
    assert (a.adj == b.adj).all() and (a.types == b.types).all()
    assert a.t == 0 and (a.last_utilities == play_round(a.adj, a.types, cfg.payoff)).all()


def test_env_config_validation_and_round_trip():
    for bad in ({"n": 2}, {"horizon": 0}, {"p_imitate": 1.5}, {"p_edge": 0.0}):
        with pytest.raises(ConfigError):
            EnvConfig(**bad)
    cfg = EnvConfig(n=20, horizon=100, p_imitate=0.5)
    assert EnvConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        EnvConfig.from_dict({"bogus": 1})
