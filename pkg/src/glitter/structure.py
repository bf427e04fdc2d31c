"""Task-specific node extraction and the learned dense adjacency."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .graph import UNREACHABLE, multi_source_bfs, spd_submatrix, sum_spd_to_targets

NORM_EPS = 1e-8


@dataclass
class TaskStructure:
    """Node set V_T of one episode (support block, query block, sampled block)."""

    node_list: list
    spd_cache: np.ndarray
    support_index: list
    query_index: list
    support_by_class: list
    adjacency: Optional[torch.Tensor] = None
    _buckets: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.node_list)

    @property
    def sampled_index(self) -> list:
        return list(range(len(self.support_index) + len(self.query_index), self.size))

    def buckets(self, D_max: int) -> torch.Tensor:
        if D_max not in self._buckets:
            self._buckets[D_max] = spd_buckets(self.spd_cache, D_max)
        return self._buckets[D_max]


def spd_buckets(spd, D_max: int) -> torch.Tensor:
    spd = np.asarray(spd)
    b = np.where(spd == UNREACHABLE, D_max + 1, np.minimum(spd, D_max))
    return torch.as_tensor(b, dtype=torch.long)


# ---------------------------------------------------------------- sampling

def local_sample(graph, support_nodes, h: int) -> set:
    """All nodes within ``h`` hops of some support node (support included)."""
    if h < 0:
        raise ValueError(f"h must be >= 0, got {h}")
    dist = multi_source_bfs(graph, support_nodes)
    return set(np.flatnonzero(dist <= h).tolist())


def common_sample(graph, support_by_class, C: int, exclude=()) -> set:
    """Per class, the C candidates with the smallest summed SPD to its supports.

    The subset argmin decomposes over nodes, so a per-node top-C with
    ascending-id tie-break is exact. Nodes at infinite total distance are
    never picked.
    """
    if C < 0:
        raise ValueError(f"C must be >= 0, got {C}")
    if C == 0:
        return set()
    mask = np.ones(graph.node_count, dtype=bool)
    mask[list(exclude)] = False
    candidates = np.flatnonzero(mask)
    picked = set()
    for targets in support_by_class:
        total = sum_spd_to_targets(graph, targets)[candidates]
        finite = np.isfinite(total)
        cand, score = candidates[finite], total[finite]
        order = np.lexsort((cand, score))
        picked.update(cand[order[:C]].tolist())
    return picked


def assemble_task_nodes(graph, episode, h: int, C: int) -> TaskStructure:
    support = episode.support_flat()
    query = list(episode.query)
    base = support + query
    taken = set(base)
    v_l = local_sample(graph, support, h)
    v_c = common_sample(graph, [list(r) for r in episode.support], C, exclude=taken)
    extra = sorted((v_l | v_c) - taken)
    nodes = base + extra
    n_s, K = len(support), episode.K
    return TaskStructure(
        node_list=nodes,
        spd_cache=spd_submatrix(graph, nodes),
        support_index=list(range(n_s)),
        query_index=list(range(n_s, n_s + len(query))),
        support_by_class=[list(range(i * K, (i + 1) * K)) for i in range(episode.N)],
    )


# ---------------------------------------------------------------- edge weights

def init_structure_params(feature_dim: int, d_a: int = 16, D_max: int = 10,
                          rng: Optional[np.random.Generator] = None) -> dict:
    rng = np.random.default_rng(0) if rng is None else rng
    std = 1.0 / np.sqrt(feature_dim)
    return {
        "W1": torch.tensor(rng.normal(0.0, std, (d_a, feature_dim))),
        "W2": torch.tensor(rng.normal(0.0, std, (d_a, feature_dim))),
        "psi_table": torch.tensor(1.0 - np.arange(D_max + 2, dtype=np.float64)),
    }


def safe_norm(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Euclidean norm with a zero (not NaN) gradient at the origin."""
    sq = (x * x).sum(dim)
    pos = sq > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def _unit_rows(z: torch.Tensor) -> torch.Tensor:
    return z / torch.clamp(safe_norm(z), min=NORM_EPS).unsqueeze(-1)


def repr_weights(X: torch.Tensor, params: dict) -> torch.Tensor:
    """Matrix of exp(-|| u_i - v_j ||) over all ordered pairs of rows of X."""
    u = _unit_rows(torch.relu(X @ params["W1"].T))
    v = _unit_rows(torch.relu(X @ params["W2"].T))
    # Gram expansion instead of an n x n x d_a difference tensor
    sq = (u * u).sum(1)[:, None] + (v * v).sum(1)[None, :] - 2.0 * (u @ v.T)
    sq = torch.clamp(sq, min=0.0)
    # cancellation makes the expansion inaccurate for near pairs; redo those directly
    ii, jj = torch.nonzero(sq.detach() < 1e-4, as_tuple=True)
    if ii.numel():
        sq = sq.index_put((ii, jj), ((u[ii] - v[jj]) ** 2).sum(1))
    pos = sq > 0
    dist = torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))
    return torch.exp(-dist)


def repr_edge_weight(x_i, x_j, params: dict) -> float:
    X = torch.stack([torch.tensor(np.asarray(x_i, dtype=np.float64)),
                     torch.tensor(np.asarray(x_j, dtype=np.float64))])
    with torch.no_grad():
        return float(repr_weights(X, params)[0, 1])


def struct_weights(buckets: torch.Tensor, params: dict) -> torch.Tensor:
    return torch.sigmoid(params["psi_table"][buckets])


def struct_edge_weight(spd_value: int, params: dict) -> torch.Tensor:
    D_max = params["psi_table"].shape[0] - 2
    b = spd_buckets(np.array([spd_value], dtype=np.int64), D_max)
    return struct_weights(b, params)[0]


def build_adjacency(task: TaskStructure, X_T: torch.Tensor, params: dict) -> torch.Tensor:
    """Directed dense adjacency a_ij = (a^r_ij + a^s_ij) / 2, diagonal included."""
    D_max = params["psi_table"].shape[0] - 2
    A = 0.5 * (repr_weights(X_T, params) + struct_weights(task.buckets(D_max), params))
    task.adjacency = A
    return A


def task_features(graph, task: TaskStructure) -> torch.Tensor:
    return torch.as_tensor(graph.features[task.node_list], dtype=torch.float64)
