"""Small-graph algorithms on dense boolean adjacency matrices.

Graphs here have at most a few dozen nodes, so everything works on an
``(n, n)`` symmetric boolean numpy array with an empty diagonal.
"""

from __future__ import annotations

from collections import deque

import numpy as np


class DisconnectedGraphError(ValueError):
    """Raised where a connected graph is required but the input is not."""


def neighbors(adj: np.ndarray) -> list[list[int]]:
    return [np.flatnonzero(row).tolist() for row in adj]


def bfs_distances(adj: np.ndarray, source: int) -> np.ndarray:
    """Hop distances from ``source``; unreachable nodes get -1."""
    n = adj.shape[0]
    nbrs = neighbors(adj)
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def is_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    if n == 0:
        return True
    # plain frontier expansion, cheaper than the BFS above for a yes/no answer
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    frontier = seen.copy()
    while frontier.any():
        frontier = adj[frontier].any(axis=0) & ~seen
        seen |= frontier
    return bool(seen.all())


def bridges(adj: np.ndarray) -> set[tuple[int, int]]:
    """Return every bridge as a ``(u, v)`` pair with ``u < v``.

    Iterative Tarjan low-link DFS, so no recursion limit concerns.
    Works on disconnected graphs too (each component is searched).
    """
    n = adj.shape[0]
    nbrs = neighbors(adj)
    disc = [-1] * n
    low = [0] * n
    found: set[tuple[int, int]] = set()
    counter = 0
    for root in range(n):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = counter
        counter += 1
        # stack frames: (node, parent, iterator position)
        stack = [(root, -1, 0)]
        while stack:
            u, parent, i = stack[-1]
            if i < len(nbrs[u]):
                stack[-1] = (u, parent, i + 1)
                v = nbrs[u][i]
                if v == parent:
                    continue
                if disc[v] < 0:
                    disc[v] = low[v] = counter
                    counter += 1
                    stack.append((v, u, 0))
                else:
                    low[u] = min(low[u], disc[v])
            else:
                stack.pop()
                if parent >= 0:
                    low[parent] = min(low[parent], low[u])
                    if low[u] > disc[parent]:
                        found.add((min(u, parent), max(u, parent)))
    return found


def diameter(adj: np.ndarray) -> int:
    """Longest shortest path. Raises on disconnected input."""
    n = adj.shape[0]
    best = 0
    for s in range(n):
        d = bfs_distances(adj, s)
        if (d < 0).any():
            raise DisconnectedGraphError("diameter is undefined for a disconnected graph")
        best = max(best, int(d.max()))
    return best


def edge_list(adj: np.ndarray) -> list[tuple[int, int]]:
    us, vs = np.nonzero(np.triu(adj, k=1))
    return list(zip(us.tolist(), vs.tolist()))


def from_edges(n: int, edges) -> np.ndarray:
    adj = np.zeros((n, n), dtype=bool)
    for u, v in edges:
        if u == v:
            raise ValueError("self-loops are not allowed")
        adj[u, v] = adj[v, u] = True
    return adj
