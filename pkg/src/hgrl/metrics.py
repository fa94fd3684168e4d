"""Welfare and network statistics reported per step and per episode."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import graph
from .env import edge_census

STEP_COLUMNS = [
    "t",
    "welfare_per_agent",
    "n_coop",
    "avg_degree",
    "diameter",
    "modularity",
    "E_CC",
    "E_CD",
    "E_DD",
    "modularity_types",
]


def welfare_per_agent(utilities: np.ndarray) -> float:
    return float(np.sum(utilities)) / utilities.shape[0]


def avg_degree(adj: np.ndarray) -> float:
    return float(adj.sum()) / adj.shape[0]


def diameter(adj: np.ndarray) -> int:
    return graph.diameter(adj)


def _labels(partition, n: int) -> np.ndarray:
    """Accept either a label per node or an iterable of node groups."""
    if isinstance(partition, np.ndarray) and partition.ndim == 1 and partition.shape[0] == n:
        return partition
    labels = np.full(n, -1, dtype=np.int64)
    for c, members in enumerate(partition):
        for v in members:
            if labels[v] >= 0:
                raise ValueError(f"node {v} appears in more than one community")
            labels[v] = c
    if (labels < 0).any():
        raise ValueError("partition does not cover every node")
    return labels


def modularity(adj: np.ndarray, partition) -> float:
    """Newman modularity, diagonal terms included. Zero for an edgeless graph."""
    n = adj.shape[0]
    labels = _labels(partition, n)
    a = adj.astype(np.float64)
    k = a.sum(axis=1)
    two_m = k.sum()
    if two_m == 0:
        return 0.0
    same = labels[:, None] == labels[None, :]
    return float(((a - np.outer(k, k) / two_m) * same).sum() / two_m)


def best_partition(adj: np.ndarray) -> list[list[int]]:
    """Greedy agglomerative modularity maximisation (Clauset-Newman-Moore).

    Starts from singletons and repeatedly merges the pair of communities with
    the largest positive modularity gain. The gain for merging i and j is
    proportional to ``2m * e_ij - d_i * d_j`` (edges between them, total
    degrees), which is integral, so comparisons and ties are exact. Ties go
    to the lexicographically smallest pair, communities being ordered by
    their smallest member.
    """
    n = adj.shape[0]
    communities = [[v] for v in range(n)]
    between = adj.astype(np.int64)
    deg = between.sum(axis=1)
    two_m = int(deg.sum())
    if two_m == 0:
        return communities
    while len(communities) > 1:
        gain = two_m * between - np.outer(deg, deg)
        k = len(communities)
        gain[np.tril_indices(k)] = np.iinfo(np.int64).min
        flat = int(np.argmax(gain))
        i, j = divmod(flat, k)
        if gain[i, j] <= 0:
            break
        communities[i] = sorted(communities[i] + communities[j])
        del communities[j]
        between[i] += between[j]
        between[:, i] += between[:, j]
        between = np.delete(np.delete(between, j, axis=0), j, axis=1)
        between[i, i] = 0
        deg[i] += deg[j]
        deg = np.delete(deg, j)
    return communities


@dataclass
class MetricsRecord:
    t: int
    welfare_per_agent: float
    n_coop: int
    avg_degree: float
    diameter: int
    modularity: float
    E_CC: int
    E_CD: int
    E_DD: int
    modularity_types: float

    def row(self) -> list:
        return [getattr(self, c) for c in STEP_COLUMNS]


def record(t: int, adj: np.ndarray, types: np.ndarray, utilities: np.ndarray) -> MetricsRecord:
    """Metrics for one played round: the graph it was played on and the players' types."""
    cc, cd, dd = edge_census(adj, types)
    return MetricsRecord(
        t=t,
        welfare_per_agent=welfare_per_agent(utilities),
        n_coop=int(np.sum(types == 0)),
        avg_degree=avg_degree(adj),
        diameter=diameter(adj),
        modularity=modularity(adj, best_partition(adj)),
        E_CC=cc,
        E_CD=cd,
        E_DD=dd,
        modularity_types=modularity(adj, types.astype(np.int64)),
    )


@dataclass
class EpisodeSummary:
    avg_welfare: float
    final_welfare: float
    series: list[MetricsRecord]
    initial: MetricsRecord | None = field(default=None)


def summarize_episode(records: list[MetricsRecord], initial: MetricsRecord | None = None) -> EpisodeSummary:
    if not records:
        raise ValueError("cannot summarise an empty episode")
    welfare = [r.welfare_per_agent for r in records]
    return EpisodeSummary(float(np.mean(welfare)), welfare[-1], list(records), initial)


def mean_std(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "std": std}


def aggregate(summaries: list[EpisodeSummary]) -> dict:
    """Means and sample standard deviations across episodes."""
    return {
        "episodes": len(summaries),
        "avg_welfare": mean_std([s.avg_welfare for s in summaries]),
        "final_welfare": mean_std([s.final_welfare for s in summaries]),
    }


def mean_timeseries(summaries: list[EpisodeSummary]) -> list[dict]:
    """Per-step metrics averaged over episodes, t=0 (initial graph) through horizon."""
    series = [([s.initial] if s.initial is not None else []) + s.series for s in summaries]
    table = np.array([[r.row() for r in episode] for episode in series], dtype=np.float64)
    means = table.mean(axis=0)
    return [dict(zip(STEP_COLUMNS, row.tolist())) for row in means]
