"""Node influence: absorbing Markov chains over a task structure and the
within-class influence loss.

Support nodes are the absorbing states. Every other node of the task
structure (queries and sampled nodes) is transient; its transition row is the
row-normalised learned adjacency over all task nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import NumericalError

GRAM_EPS = 1e-8


def as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def row_normalize_t(A: torch.Tensor) -> torch.Tensor:
    """Differentiable counterpart of :func:`glitter.graph.row_normalize`."""
    sums = A.sum(dim=1, keepdim=True)
    zero = sums == 0
    out = A / torch.where(zero, torch.ones_like(sums), sums)
    if bool(zero.any()):
        eye = torch.eye(A.shape[0], dtype=A.dtype)
        out = torch.where(zero, eye, out)
    return out


@dataclass
class AbsorbingChain:
    ordering: list          # transient states first, then absorbing states
    transient: list
    absorbing: list
    A_tilde: torch.Tensor   # full transition matrix in the original node order
    Q_block: torch.Tensor
    R_block: torch.Tensor

    @property
    def t(self) -> int:
        return len(self.transient)


def build_absorbing_chain(A, support_index) -> AbsorbingChain:
    A = as_tensor(A)
    n = A.shape[0]
    absorbing = [int(i) for i in support_index]
    if not absorbing:
        raise ValueError("build_absorbing_chain: support_index is empty")
    if len(set(absorbing)) != len(absorbing) or not all(0 <= i < n for i in absorbing):
        raise ValueError("build_absorbing_chain: support indices must be distinct and in range")
    is_abs = torch.zeros(n, dtype=torch.bool)
    is_abs[absorbing] = True
    transient = [i for i in range(n) if not is_abs[i]]

    eye = torch.eye(n, dtype=A.dtype)
    A_tilde = torch.where(is_abs.unsqueeze(1), eye, row_normalize_t(A))
    ti = torch.tensor(transient, dtype=torch.long)
    ai = torch.tensor(absorbing, dtype=torch.long)
    Q_block = A_tilde[ti][:, ti]
    R_block = A_tilde[ti][:, ai]
    return AbsorbingChain(transient + absorbing, transient, absorbing, A_tilde, Q_block, R_block)


def exact_absorbing_probs(chain: AbsorbingChain) -> torch.Tensor:
    """B = (I - Q)^-1 R by a dense LU solve."""
    t = chain.t
    if t == 0:
        return chain.R_block
    M = torch.eye(t, dtype=chain.Q_block.dtype) - chain.Q_block
    cond = float(torch.linalg.cond(M.detach()))
    if not math.isfinite(cond) or cond > 1e14:
        raise NumericalError(f"I - Q is singular to working precision (condition estimate {cond:.3g})")
    return torch.linalg.solve(M, chain.R_block)


def truncated_absorbing_probs(chain: AbsorbingChain, m: int) -> torch.Tensor:
    """sum_{h=0..m} Q^h R, accumulated with a running product."""
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    term = chain.R_block
    total = term
    for _ in range(m):
        term = chain.Q_block @ term
        total = total + term
    return total


def linear_propagation_influence(A_tilde, L: int) -> torch.Tensor:
    """Jacobian-norm influence of L identity-weight propagation steps, i.e. A_tilde^L."""
    return torch.linalg.matrix_power(as_tensor(A_tilde), L)


def class_influence_loss(H: torch.Tensor, support_by_class) -> torch.Tensor:
    """Within-class node-influence loss over the task representations ``H``.

    For each support node j of class l, same-class dot products are weighted
    by (K-2)/(n-1) and dot products with every task node outside the class by
    -(K-1)/(n-1), all divided by ||h_j||^2; the result is negated and averaged
    over classes.
    """
    H = as_tensor(H)
    n = H.shape[0]
    if n <= 1:
        raise ValueError("class_influence_loss needs at least two task nodes")
    N = len(support_by_class)
    G = H @ H.T
    row_total = G.sum(dim=1)
    total = H.new_zeros(())
    for members in support_by_class:
        idx = torch.as_tensor(members, dtype=torch.long)
        K = len(members)
        Gc = G[idx]
        in_class = Gc[:, idx].sum(dim=1)
        same = in_class - Gc[torch.arange(K), idx]
        other = row_total[idx] - in_class
        sq = torch.clamp(torch.diagonal(G)[idx], min=GRAM_EPS)
        total = total + (((K - 2) * same - (K - 1) * other) / ((n - 1) * sq)).sum()
    return -total / N


def geometric_mean_influence(B, node_index: int, class_support_indices):
    """Geometric mean of one node's influences from a class's support states.

    Returns ``(value, had_zero)``; a zero influence gives ``(0.0, True)``.
    """
    B = as_tensor(B)
    vals = B[node_index, list(class_support_indices)].detach().double()
    if bool((vals <= 0).any()):
        return 0.0, True
    return float(torch.exp(torch.log(vals).mean())), False
