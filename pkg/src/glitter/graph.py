"""Graph container, BFS shortest paths and matrix normalisation."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

# Larger than any achievable hop count; kept integral so comparisons stay total.
UNREACHABLE = np.iinfo(np.int64).max


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected node-attributed graph with unit edge weights.

    Edges are stored once per unordered pair (``u < v``). ``labels`` holds a
    global class id per node, or ``None`` for unlabelled nodes.
    """

    graph_id: int
    node_count: int
    edges: np.ndarray
    features: np.ndarray
    labels: tuple
    adjacency_index: tuple = field(repr=False)

    @classmethod
    def build(cls, graph_id: int, node_count: int, edges: Iterable[Sequence[int]],
              features, labels: Optional[Sequence[Optional[int]]] = None) -> "Graph":
        n = int(node_count)
        if n <= 0:
            raise ValueError(f"graph {graph_id}: node_count must be positive, got {n}")
        features = np.array(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != n:
            raise ValueError(
                f"graph {graph_id}: features must be a {n}x d matrix, got shape {features.shape}")
        if not np.all(np.isfinite(features)):
            raise ValueError(f"graph {graph_id}: features contain NaN or Inf")

        pairs = set()
        for e in edges:
            u, v = int(e[0]), int(e[1])
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"graph {graph_id}: edge ({u}, {v}) out of range [0, {n})")
            if u == v:
                continue
            pairs.add((min(u, v), max(u, v)))
        edge_arr = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)

        if labels is None:
            labels = [None] * n
        if len(labels) != n:
            raise ValueError(f"graph {graph_id}: expected {n} labels, got {len(labels)}")
        labels = tuple(None if y is None else int(y) for y in labels)

        nbrs = [[] for _ in range(n)]
        for u, v in edge_arr:
            nbrs[u].append(int(v))
            nbrs[v].append(int(u))
        adjacency_index = tuple(tuple(sorted(x)) for x in nbrs)

        edge_arr.setflags(write=False)
        features.setflags(write=False)
        return cls(int(graph_id), n, edge_arr, features, labels, adjacency_index)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def neighbors(self, v: int) -> tuple:
        return self.adjacency_index[v]

    def nodes_with_label(self, class_id: int) -> list[int]:
        return [v for v, y in enumerate(self.labels) if y == class_id]

    def label_set(self) -> set:
        return {y for y in self.labels if y is not None}

    def dense_adjacency(self, nodes: Optional[Sequence[int]] = None) -> np.ndarray:
        """0/1 adjacency, optionally induced on ``nodes`` (in the given order)."""
        if nodes is None:
            nodes = range(self.node_count)
        nodes = list(nodes)
        pos = {v: i for i, v in enumerate(nodes)}
        out = np.zeros((len(nodes), len(nodes)))
        for i, v in enumerate(nodes):
            for u in self.adjacency_index[v]:
                j = pos.get(u)
                if j is not None:
                    out[i, j] = 1.0
        return out

    def csr(self) -> csr_matrix:
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(u))
        return csr_matrix((data, (np.concatenate([u, v]), np.concatenate([v, u]))),
                          shape=(self.node_count, self.node_count))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.graph_id == other.graph_id
                and self.node_count == other.node_count
                and np.array_equal(self.edges, other.edges)
                and self.features.shape == other.features.shape
                and np.array_equal(self.features, other.features)
                and self.labels == other.labels)


def _check_node(graph: Graph, v: int) -> int:
    v = int(v)
    if not 0 <= v < graph.node_count:
        raise ValueError(f"node {v} out of range [0, {graph.node_count}) in graph {graph.graph_id}")
    return v


def bfs_spd(graph: Graph, source: int) -> np.ndarray:
    """Unweighted shortest-path distances from ``source`` (``UNREACHABLE`` if no path)."""
    source = _check_node(graph, source)
    dist = np.full(graph.node_count, UNREACHABLE, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    nbrs = graph.adjacency_index
    while queue:
        u = queue.popleft()
        du = dist[u] + 1
        for w in nbrs[u]:
            if dist[w] == UNREACHABLE:
                dist[w] = du
                queue.append(w)
    return dist


def multi_source_bfs(graph: Graph, sources: Iterable[int]) -> np.ndarray:
    """Distance from every node to the nearest of ``sources``."""
    dist = np.full(graph.node_count, UNREACHABLE, dtype=np.int64)
    queue = deque()
    for s in sources:
        s = _check_node(graph, s)
        if dist[s] != 0:
            dist[s] = 0
            queue.append(s)
    nbrs = graph.adjacency_index
    while queue:
        u = queue.popleft()
        du = dist[u] + 1
        for w in nbrs[u]:
            if dist[w] == UNREACHABLE:
                dist[w] = du
                queue.append(w)
    return dist


def spd_submatrix(graph: Graph, nodes: Sequence[int]) -> np.ndarray:
    """Pairwise SPD among ``nodes`` on the original graph."""
    nodes = [_check_node(graph, v) for v in nodes]
    if len(set(nodes)) != len(nodes):
        raise ValueError("spd_submatrix: duplicate node ids")
    idx = np.asarray(nodes, dtype=np.int64)
    if len(idx) == 0:
        return np.zeros((0, 0), dtype=np.int64)
    d = shortest_path(graph.csr(), method="D", unweighted=True, directed=False, indices=idx)[:, idx]
    out = np.full(d.shape, UNREACHABLE, dtype=np.int64)
    finite = np.isfinite(d)
    out[finite] = d[finite].astype(np.int64)
    return out


def sum_spd_to_targets(graph: Graph, targets: Sequence[int]) -> np.ndarray:
    """``out[v] = sum_t SPD(v, t)``; ``inf`` if any target is unreachable from ``v``."""
    targets = list(targets)
    if not targets:
        raise ValueError("sum_spd_to_targets: targets must be nonempty")
    out = np.zeros(graph.node_count)
    for t in targets:
        d = bfs_spd(graph, t)
        out += np.where(d == UNREACHABLE, np.inf, d.astype(np.float64))
    return out


def row_normalize(matrix) -> np.ndarray:
    """Divide each row by its sum; all-zero rows become one-hot self transitions."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"row_normalize expects a square matrix, got shape {m.shape}")
    if np.any(m < 0):
        raise ValueError("row_normalize: negative entries")
    sums = m.sum(axis=1, keepdims=True)
    zero = sums[:, 0] == 0
    out = m / np.where(sums == 0, 1.0, sums)
    out[zero] = 0.0
    out[zero, np.flatnonzero(zero)] = 1.0
    return out
