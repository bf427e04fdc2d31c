"""Episodic meta-test evaluation and two reference baselines (KNN, ProtoNet)."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterator, Optional

import numpy as np
import torch

from .config import TrainConfig
from .data import Checkpoint
from .episodes import Episode, episode_rng, sample_episode
from .errors import SchemaError
from .influence import row_normalize_t
from .meta import evaluate_episode, make_task_context, split_for
from .model import ParameterSet, gcn_forward, init_encoder_params
from .structure import assemble_task_nodes, task_features


@dataclass
class EvalReport:
    per_repetition_accuracy: list
    mean: float
    std: float
    episodes_per_repetition: int
    setting: str
    method: str = "glitter"
    seed: int = 0

    @classmethod
    def from_accuracies(cls, accs, episodes, setting, method="glitter", seed=0) -> "EvalReport":
        accs = [float(a) for a in accs]
        return cls(accs, float(np.mean(accs)), float(np.std(accs)), int(episodes), setting, method, seed)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def table(self) -> str:
        lines = [f"method   : {self.method}", f"setting  : {self.setting}",
                 f"episodes : {self.episodes_per_repetition} per repetition", "rep  accuracy"]
        lines += [f"{i:>3}  {a:.4f}" for i, a in enumerate(self.per_repetition_accuracy)]
        lines.append(f"mean {self.mean:.4f} +/- {self.std:.4f}")
        return "\n".join(lines)


def episode_stream(dataset, split, cfg: TrainConfig, repetitions: int, episodes: int,
                   seed: Optional[int] = None, phase: str = "test") -> Iterator:
    """Yield ``(rep, index, episode, rng)``; the rng continues past episode sampling."""
    seed = cfg.seed if seed is None else seed
    for r in range(repetitions):
        for j in range(episodes):
            rng = episode_rng(seed, phase, r, j)
            yield r, j, sample_episode(dataset, split, phase, cfg.N, cfg.K, cfg.Q, rng), rng


def _check_compatible(ckpt: Checkpoint, cfg: TrainConfig, dataset):
    for key in ("N", "hidden_dim", "d_a", "D_max"):
        if ckpt.config.get(key) != getattr(cfg, key):
            raise SchemaError(f"checkpoint {key}={ckpt.config.get(key)} incompatible with config {key}={getattr(cfg, key)}")
    if ckpt.feature_dim != dataset.feature_dim:
        raise SchemaError(f"checkpoint feature_dim={ckpt.feature_dim} but dataset has {dataset.feature_dim}")


def _score_repetition(args) -> list:
    params, dataset, split, cfg, r, episodes, seed = args
    accs = []
    for j in range(episodes):
        rng = episode_rng(seed, "test", r, j)
        ep = sample_episode(dataset, split, "test", cfg.N, cfg.K, cfg.Q, rng)
        accs.append(evaluate_episode(make_task_context(dataset, ep, cfg), params, cfg, rng))
    return accs


def evaluate(checkpoint: Checkpoint, dataset, split=None, cfg: Optional[TrainConfig] = None,
             repetitions: int = 10, episodes_per_rep: int = 50, seed: Optional[int] = None,
             workers: int = 1) -> EvalReport:
    """Adapt from the checkpoint on each test episode and score query accuracy.

    Each episode owns its rng substream, so ``workers > 1`` (one process per
    repetition at a time) gives the same report as a serial run.
    """
    cfg = TrainConfig.from_dict(checkpoint.config) if cfg is None else cfg
    _check_compatible(checkpoint, cfg, dataset)
    split = split_for(dataset, cfg) if split is None else split
    seed = cfg.seed if seed is None else seed
    params = ParameterSet.from_checkpoint(checkpoint)
    jobs = [(params, dataset, split, cfg, r, episodes_per_rep, seed) for r in range(repetitions)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_score_repetition, jobs))
    else:
        per_rep = [_score_repetition(job) for job in jobs]
    accs = [float(np.mean(a)) for a in per_rep]
    return EvalReport.from_accuracies(accs, episodes_per_rep, cfg.setting, "glitter", seed)


# ---------------------------------------------------------------- KNN

def knn_baseline(episode: Episode, features, k: int) -> float:
    """Majority vote of the k most cosine-similar support nodes on raw features."""
    X = np.asarray(features, dtype=np.float64)
    support = episode.support_flat()
    slots = np.asarray(episode.support_slots())
    if not 1 <= k <= len(support):
        raise ValueError(f"k must lie in [1, {len(support)}], got {k}")
    S = X[support]
    Qm = X[list(episode.query)]
    Sn = S / np.maximum(np.linalg.norm(S, axis=1, keepdims=True), 1e-12)
    Qn = Qm / np.maximum(np.linalg.norm(Qm, axis=1, keepdims=True), 1e-12)
    sim = Qn @ Sn.T
    correct = 0
    for q, truth in enumerate(episode.query_slots):
        # stable sort keeps lower support positions first among equal similarities
        nearest = np.argsort(-sim[q], kind="stable")[:k]
        votes = np.bincount(slots[nearest], minlength=episode.N)
        correct += int(np.argmax(votes) == truth)
    return correct / len(episode.query)


def knn_evaluate(dataset, cfg: TrainConfig, repetitions=10, episodes_per_rep=50, k=None,
                 seed=None, split=None) -> EvalReport:
    split = split_for(dataset, cfg) if split is None else split
    k = cfg.K if k is None else k
    accs = np.zeros((repetitions, episodes_per_rep))
    for r, j, ep, _ in episode_stream(dataset, split, cfg, repetitions, episodes_per_rep, seed):
        accs[r, j] = knn_baseline(ep, dataset.graph(ep.graph_id).features, k)
    return EvalReport.from_accuracies(accs.mean(axis=1), episodes_per_rep, cfg.setting, "knn",
                                      cfg.seed if seed is None else seed)


# ---------------------------------------------------------------- ProtoNet

def induced_adjacency(graph, task) -> torch.Tensor:
    """Original unit-weight edges among the task nodes, plus self loops."""
    A = graph.dense_adjacency(task.node_list) + np.eye(task.size)
    return torch.as_tensor(A)


def prototype_logits(H, support_rows, support_slots, query_rows, n_slots) -> torch.Tensor:
    Hs = H[torch.as_tensor(support_rows)]
    slots = torch.as_tensor(support_slots)
    onehot = torch.nn.functional.one_hot(slots, n_slots).to(H.dtype)
    protos = (onehot.T @ Hs) / onehot.sum(0).unsqueeze(1)
    Hq = H[torch.as_tensor(query_rows)]
    return -torch.cdist(Hq, protos) ** 2


def _protonet_episode(dataset, ep, cfg):
    graph = dataset.graph(ep.graph_id)
    task = assemble_task_nodes(graph, ep, cfg.h, cfg.C)
    return task, induced_adjacency(graph, task), task_features(graph, task)


def protonet_baseline_train(dataset, cfg: TrainConfig, epochs: Optional[int] = None,
                            lr: float = 0.005, weight_decay: float = 5e-4, split=None) -> dict:
    """Episodic ProtoNet training of the two-layer encoder on the training episode stream."""
    split = split_for(dataset, cfg) if split is None else split
    epochs = cfg.epochs if epochs is None else epochs
    init = init_encoder_params(dataset.feature_dim, cfg.hidden_dim, cfg.N, np.random.default_rng([cfg.seed, 7]))
    params = {k: init[k].clone().requires_grad_(True) for k in ("gcn_W1", "gcn_W2")}
    opt = torch.optim.Adam(params.values(), lr=lr, weight_decay=weight_decay)
    for i in range(epochs):
        rng = episode_rng(cfg.seed, "train", i)
        ep = sample_episode(dataset, split, "train", cfg.N, cfg.K, cfg.Q, rng)
        task, A, X = _protonet_episode(dataset, ep, cfg)
        H = gcn_forward(A, X, params, training=True, rng=rng, dropout_rate=cfg.dropout_rate)
        lg = prototype_logits(H, task.support_index, ep.support_slots(), task.query_index, ep.N)
        loss = torch.nn.functional.cross_entropy(lg, torch.as_tensor(ep.query_slots))
        opt.zero_grad()
        loss.backward()
        opt.step()
    return {k: v.detach().clone() for k, v in params.items()}


def protonet_predict(params: dict, dataset, ep: Episode, cfg: TrainConfig) -> np.ndarray:
    task, A, X = _protonet_episode(dataset, ep, cfg)
    with torch.no_grad():
        H = gcn_forward(A, X, params)
        lg = prototype_logits(H, task.support_index, ep.support_slots(), task.query_index, ep.N)
    return lg.argmax(dim=1).numpy()


def protonet_baseline_eval(params: dict, dataset, cfg: TrainConfig, repetitions=10, episodes_per_rep=50,
                           seed=None, split=None) -> EvalReport:
    split = split_for(dataset, cfg) if split is None else split
    accs = np.zeros((repetitions, episodes_per_rep))
    for r, j, ep, _ in episode_stream(dataset, split, cfg, repetitions, episodes_per_rep, seed):
        accs[r, j] = float(np.mean(protonet_predict(params, dataset, ep, cfg) == np.asarray(ep.query_slots)))
    return EvalReport.from_accuracies(accs.mean(axis=1), episodes_per_rep, cfg.setting, "protonet",
                                      cfg.seed if seed is None else seed)
