"""Query class probabilities from absorbing probabilities, and the
transductive mutual-information loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .influence import as_tensor

PROB_EPS = 1e-8


@dataclass
class QueryClassDistribution:
    probs: torch.Tensor          # |Q| x N
    fallback_rows: torch.Tensor  # bool, rows whose raw score summed to 0
    normalized: bool = True


def query_class_distribution(B_trunc, absorbing_slots, query_rows, n_slots=None,
                             normalize: bool = True) -> QueryClassDistribution:
    """Sum a query's absorption mass over each class's support states.

    ``absorbing_slots[s]`` is the class slot of absorbing column ``s``;
    ``query_rows`` selects the transient rows that are query nodes.
    """
    B_trunc = as_tensor(B_trunc)
    slots = torch.as_tensor(absorbing_slots, dtype=torch.long)
    N = int(slots.max()) + 1 if n_slots is None else n_slots
    onehot = torch.nn.functional.one_hot(slots, N).to(B_trunc.dtype)
    raw = B_trunc[torch.as_tensor(query_rows, dtype=torch.long)] @ onehot
    dead = raw.sum(dim=1, keepdim=True) <= 0
    clipped = torch.clamp(raw, min=PROB_EPS)
    if normalize:
        clipped = clipped / clipped.sum(dim=1, keepdim=True)
    uniform = torch.full_like(clipped, 1.0 / N)
    probs = torch.where(dead, uniform, clipped)
    return QueryClassDistribution(probs, dead.squeeze(1), normalize)


def mi_from_probs(P: torch.Tensor) -> torch.Tensor:
    """Negative mutual information: sum_j pbar_j log pbar_j - mean_i sum_j p_ij log p_ij."""
    pbar = P.mean(dim=0)
    marginal = torch.xlogy(pbar, pbar).sum()
    conditional = torch.xlogy(P, P).sum(dim=1).mean()
    return marginal - conditional


def mutual_info_loss(dist, validate: bool = True) -> torch.Tensor:
    P = dist.probs if isinstance(dist, QueryClassDistribution) else as_tensor(dist)
    if validate:
        err = (P.detach().sum(dim=1) - 1.0).abs().max()
        if float(err) > 1e-9:
            raise ValueError(f"mutual_info_loss: rows are not normalised (max deviation {float(err):.3g})")
        if bool((P.detach() < 0).any()):
            raise ValueError("mutual_info_loss: negative probabilities")
    return mi_from_probs(P)
