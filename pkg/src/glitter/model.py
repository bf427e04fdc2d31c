"""Two-layer GCN encoder over the learned task adjacency, slot classifier,
losses, and gradient evaluation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
import torch

from .data import THETA_G_NAMES, THETA_S_NAMES, Checkpoint
from .errors import NumericalError
from .influence import row_normalize_t
from .structure import init_structure_params

LOG_EPS = 1e-12


@dataclass
class ParameterSet:
    """Structure parameters theta_S and encoder/classifier parameters theta_G."""

    theta_S: dict
    theta_G: dict

    def named(self) -> dict:
        return {**self.theta_S, **self.theta_G}

    def group_of(self, name: str) -> dict:
        return self.theta_S if name in self.theta_S else self.theta_G

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.detach().clone() for k, v in self.theta_S.items()},
                            {k: v.detach().clone() for k, v in self.theta_G.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.detach().numpy().ravel() for v in self.named().values()])

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.named().items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v.detach().numpy()).tobytes())
        return h.hexdigest()

    def equal(self, other: "ParameterSet") -> bool:
        a, b = self.named(), other.named()
        return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)

    def to_checkpoint(self, config: dict, feature_dim: int, rng_state: Optional[dict] = None) -> Checkpoint:
        return Checkpoint({k: v.detach().numpy().copy() for k, v in self.theta_S.items()},
                          {k: v.detach().numpy().copy() for k, v in self.theta_G.items()},
                          dict(config), feature_dim, dict(rng_state or {}))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "ParameterSet":
        return cls({k: torch.tensor(ckpt.theta_S[k]) for k in THETA_S_NAMES},
                   {k: torch.tensor(ckpt.theta_G[k]) for k in THETA_G_NAMES})


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return torch.tensor(rng.uniform(-lim, lim, (fan_in, fan_out)))


def init_encoder_params(feature_dim: int, hidden_dim: int, n_slots: int, rng) -> dict:
    return {
        "gcn_W1": _glorot(rng, feature_dim, hidden_dim),
        "gcn_W2": _glorot(rng, hidden_dim, hidden_dim),
        "clf_W": _glorot(rng, hidden_dim, n_slots),
        "clf_b": torch.zeros(n_slots, dtype=torch.float64),
    }


def init_params(feature_dim: int, cfg, seed: Optional[int] = None) -> ParameterSet:
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 7])
    theta_S = init_structure_params(feature_dim, cfg.d_a, cfg.D_max, rng)
    theta_G = init_encoder_params(feature_dim, cfg.hidden_dim, cfg.N, rng)
    return ParameterSet(theta_S, theta_G)


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> torch.Tensor:
    if rate <= 0:
        return torch.ones(shape, dtype=torch.float64)
    keep = rng.random(shape) >= rate
    return torch.as_tensor(keep / (1.0 - rate))


def gcn_forward(A, X_T, params: dict, training: bool = False, rng=None,
                dropout_rate: float = 0.5, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """H = Ahat relu(Ahat X W1) W2 with Ahat the row-normalised adjacency.

    Dropout after the first layer uses ``mask`` when given, otherwise a fresh
    mask from ``rng`` when ``training``.
    """
    W1, W2 = params["gcn_W1"], params["gcn_W2"]
    if A.shape[0] != A.shape[1] or A.shape[0] != X_T.shape[0]:
        raise ValueError(f"gcn_forward: adjacency {tuple(A.shape)} does not match features {tuple(X_T.shape)}")
    if X_T.shape[1] != W1.shape[0]:
        raise ValueError(f"gcn_forward: feature dim {X_T.shape[1]} != gcn_W1 rows {W1.shape[0]}")
    A_hat = row_normalize_t(A)
    H1 = torch.relu(A_hat @ (X_T @ W1))
    if mask is None and training:
        if rng is None:
            raise ValueError("gcn_forward: training mode needs an rng or an explicit mask")
        mask = dropout_mask(tuple(H1.shape), dropout_rate, rng)
    if mask is not None:
        H1 = H1 * mask
    return A_hat @ (H1 @ W2)


def logits(H: torch.Tensor, params: dict) -> torch.Tensor:
    return H @ params["clf_W"] + params["clf_b"]


def classify(H: torch.Tensor, params: dict) -> torch.Tensor:
    return torch.softmax(logits(H, params), dim=1)


def cross_entropy(probs: torch.Tensor, rows, slot_labels) -> torch.Tensor:
    """Summed negative log-probability of ``slot_labels`` on the selected rows."""
    rows = torch.as_tensor(rows, dtype=torch.long)
    labels = torch.as_tensor(slot_labels, dtype=torch.long)
    if rows.numel() == 0:
        raise ValueError("cross_entropy: empty selection")
    if rows.shape != labels.shape:
        raise ValueError("cross_entropy: rows and labels differ in length")
    if int(labels.min()) < 0 or int(labels.max()) >= probs.shape[1]:
        raise ValueError("cross_entropy: slot label out of range")
    picked = probs[rows, labels]
    return -torch.log(torch.clamp(picked, min=LOG_EPS)).sum()


@dataclass
class LossValue:
    value: float
    gradients: dict = field(default_factory=dict)


def _resolve(params: ParameterSet, wrt) -> list:
    names = []
    for w in wrt:
        if w == "theta_S":
            names.extend(params.theta_S)
        elif w == "theta_G":
            names.extend(params.theta_G)
        elif w in params.named():
            names.append(w)
        else:
            raise KeyError(f"unknown parameter {w!r}")
    return names


def compute_gradients(loss_fn: Callable[[ParameterSet], torch.Tensor], params: ParameterSet,
                      wrt: Iterable[str] = ("theta_S", "theta_G")) -> LossValue:
    """Evaluate ``loss_fn`` and its exact gradient w.r.t. the requested tensors.

    ``wrt`` takes tensor names or the group names ``theta_S`` / ``theta_G``.
    Tensors the loss does not touch get zero gradients.
    """
    names = _resolve(params, wrt)
    live = ParameterSet({k: v.detach().clone().requires_grad_(k in names) for k, v in params.theta_S.items()},
                        {k: v.detach().clone().requires_grad_(k in names) for k, v in params.theta_G.items()})
    loss = loss_fn(live)
    value = float(loss.detach())
    if not np.isfinite(value):
        raise NumericalError(f"loss is not finite ({value})")
    inputs = [live.named()[k] for k in names]
    grads = torch.autograd.grad(loss, inputs, allow_unused=True) if loss.requires_grad else [None] * len(inputs)
    out = {}
    for k, x, g in zip(names, inputs, grads):
        g = torch.zeros_like(x) if g is None else g.detach()
        if not bool(torch.isfinite(g).all()):
            raise NumericalError(f"non-finite gradient for parameter {k!r}")
        out[k] = g
    return LossValue(value, out)
