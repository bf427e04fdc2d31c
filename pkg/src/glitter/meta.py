"""Per-episode losses, inner adaptation, meta-updates and the training loop.

Inner step i on one episode:

    theta_S <- theta_S - alpha * grad_S (L_N + L_M)
    theta_G <- theta_G - alpha * grad_G L_support      (adjacency held fixed)

After eta steps the meta-step is taken from the adapted parameters:

    theta_G <- theta_G^(eta) - beta1 * (grad_G L_query + weight_decay * theta_G^(eta))
    theta_S <- theta_S^(eta) - beta2 * grad_S L_S

``classic_maml`` starts the meta-step from the pre-adaptation parameters
instead; only then does ``first_order=False`` (differentiating through the
inner trajectory) change anything.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from .config import TrainConfig
from .episodes import Episode, episode_rng, make_split, sample_episode
from .errors import TrainingError
from .influence import build_absorbing_chain, class_influence_loss, truncated_absorbing_probs
from .mi import mutual_info_loss, query_class_distribution
from .model import (ParameterSet, classify, compute_gradients, cross_entropy, dropout_mask,
                    gcn_forward, init_params)
from .structure import TaskStructure, assemble_task_nodes, build_adjacency, task_features

log = logging.getLogger(__name__)


@dataclass
class TaskContext:
    episode: Episode
    task: TaskStructure
    X_T: torch.Tensor
    support_labels: list
    query_labels: list

    @property
    def size(self) -> int:
        return self.task.size

    @property
    def support_rows(self) -> list:
        return self.task.support_index

    @property
    def query_rows(self) -> list:
        return self.task.query_index

    @property
    def absorbing_slots(self) -> list:
        # absorbing states follow support_index order, which is slot-major
        return self.support_labels

    @property
    def query_transient_rows(self) -> list:
        # transient states keep node_list order, so queries come first
        return list(range(len(self.task.query_index)))


def make_task_context(dataset, episode: Episode, cfg: TrainConfig) -> TaskContext:
    graph = dataset.graph(episode.graph_id)
    task = assemble_task_nodes(graph, episode, cfg.h, cfg.C)
    return TaskContext(episode, task, task_features(graph, task),
                       episode.support_slots(), list(episode.query_slots))


def adjacency(ctx: TaskContext, theta_S: dict) -> torch.Tensor:
    return build_adjacency(ctx.task, ctx.X_T, theta_S)


def structure_loss_parts(ctx: TaskContext, params: ParameterSet, cfg: TrainConfig, mask=None):
    """(L_N, L_M) on the current learned structure."""
    A = adjacency(ctx, params.theta_S)
    zero = A.new_zeros(())
    l_n = l_m = zero
    if cfg.use_influence_loss:
        H = gcn_forward(A, ctx.X_T, params.theta_G, mask=mask)
        l_n = class_influence_loss(H, ctx.task.support_by_class)
    if cfg.use_mi_loss:
        chain = build_absorbing_chain(A, ctx.task.support_index)
        B = truncated_absorbing_probs(chain, cfg.m)
        dist = query_class_distribution(B, ctx.absorbing_slots, ctx.query_transient_rows,
                                        cfg.N, normalize=cfg.normalize_eq6)
        l_m = mutual_info_loss(dist, validate=cfg.normalize_eq6)
    return l_n, l_m


def structure_loss(ctx: TaskContext, params: ParameterSet, cfg: TrainConfig, mask=None) -> torch.Tensor:
    l_n, l_m = structure_loss_parts(ctx, params, cfg, mask)
    return l_n + l_m


def _supervised_loss(ctx, params, mask, A, rows, labels):
    if A is None:
        A = adjacency(ctx, params.theta_S)
    H = gcn_forward(A, ctx.X_T, params.theta_G, mask=mask)
    return cross_entropy(classify(H, params.theta_G), rows, labels)


def support_loss(ctx: TaskContext, params: ParameterSet, mask=None, A=None) -> torch.Tensor:
    return _supervised_loss(ctx, params, mask, A, ctx.support_rows, ctx.support_labels)


def query_loss(ctx: TaskContext, params: ParameterSet, mask=None, A=None) -> torch.Tensor:
    return _supervised_loss(ctx, params, mask, A, ctx.query_rows, ctx.query_labels)


def predict_query(ctx: TaskContext, params: ParameterSet) -> np.ndarray:
    with torch.no_grad():
        A = adjacency(ctx, params.theta_S)
        P = classify(gcn_forward(A, ctx.X_T, params.theta_G), params.theta_G)
    return P[ctx.query_rows].argmax(dim=1).numpy()


def query_accuracy(ctx: TaskContext, params: ParameterSet) -> float:
    return float(np.mean(predict_query(ctx, params) == np.asarray(ctx.query_labels)))


# ---------------------------------------------------------------- inner / outer loop

@dataclass
class InnerTrace:
    structure_losses: list = field(default_factory=list)
    support_losses: list = field(default_factory=list)


def _mask(ctx, cfg, rng):
    return dropout_mask((ctx.size, cfg.hidden_dim), cfg.dropout_rate, rng)


def _step(group: dict, grads: dict, lr: float) -> dict:
    return {k: v - lr * grads[k] for k, v in group.items()}


def inner_adapt(ctx: TaskContext, params: ParameterSet, cfg: TrainConfig, rng: np.random.Generator):
    """eta alternating steps on theta_S (via L_S) then theta_G (via L_support)."""
    cur = params.copy()
    trace = InnerTrace()
    for _ in range(cfg.eta):
        mask_s = _mask(ctx, cfg, rng)
        try:
            ls = compute_gradients(lambda p: structure_loss(ctx, p, cfg, mask_s), cur, ("theta_S",))
        except ArithmeticError as e:
            raise TrainingError(f"structure loss failed: {e}", trace) from e
        cur = ParameterSet(_step(cur.theta_S, ls.gradients, cfg.alpha), cur.theta_G)
        trace.structure_losses.append(ls.value)

        mask_g = _mask(ctx, cfg, rng)
        with torch.no_grad():
            A = adjacency(ctx, cur.theta_S)
        try:
            lg = compute_gradients(lambda p: support_loss(ctx, p, mask_g, A), cur, ("theta_G",))
        except ArithmeticError as e:
            raise TrainingError(f"support loss failed: {e}", trace) from e
        cur = ParameterSet(cur.theta_S, _step(cur.theta_G, lg.gradients, cfg.alpha))
        trace.support_losses.append(lg.value)
    return cur, trace


def _second_order_grads(ctx, params, cfg, masks):
    """Meta-gradients w.r.t. the initial parameters through the whole inner trajectory."""
    live_S = {k: v.detach().clone().requires_grad_(True) for k, v in params.theta_S.items()}
    live_G = {k: v.detach().clone().requires_grad_(True) for k, v in params.theta_G.items()}
    S, G = live_S, live_G
    for mask_s, mask_g in masks["inner"]:
        ls = structure_loss(ctx, ParameterSet(S, G), cfg, mask_s)
        gs = torch.autograd.grad(ls, list(S.values()), create_graph=True, allow_unused=True)
        S = {k: v - cfg.alpha * (g if g is not None else 0) for (k, v), g in zip(S.items(), gs)}
        A = adjacency(ctx, S).detach()
        lg = support_loss(ctx, ParameterSet(S, G), mask_g, A)
        gg = torch.autograd.grad(lg, list(G.values()), create_graph=True, allow_unused=True)
        G = {k: v - cfg.alpha * (g if g is not None else 0) for (k, v), g in zip(G.items(), gg)}
    A = adjacency(ctx, S).detach()
    lq = query_loss(ctx, ParameterSet(S, G), masks["query"], A)
    g_query = torch.autograd.grad(lq, list(live_G.values()), retain_graph=True, allow_unused=True)
    lsf = structure_loss(ctx, ParameterSet(S, G), cfg, masks["structure"])
    g_struct = torch.autograd.grad(lsf, list(live_S.values()), allow_unused=True)

    def pack(group, grads):
        return {k: (torch.zeros_like(v) if g is None else g.detach()) for (k, v), g in zip(group.items(), grads)}
    return pack(live_G, g_query), pack(live_S, g_struct), float(lq.detach()), float(lsf.detach())


@dataclass
class EpisodeRecord:
    episode: int
    structure_losses: list
    support_losses: list
    query_loss: float
    query_accuracy: float
    graph_id: int = 0
    class_slots: tuple = ()

    def to_dict(self) -> dict:
        return {"episode": self.episode, "graph_id": self.graph_id, "class_slots": list(self.class_slots),
                "L_S": self.structure_losses, "L_support": self.support_losses,
                "L_query": self.query_loss, "query_accuracy": self.query_accuracy}


def meta_update(ctx: TaskContext, params: ParameterSet, cfg: TrainConfig, rng: np.random.Generator):
    """Inner adaptation followed by the two meta-steps; returns (new params, record)."""
    if cfg.classic_maml and not cfg.first_order:
        masks = {"inner": [], "query": None, "structure": None}
        # draw masks in the same order inner_adapt would
        state = rng.bit_generator.state
        adapted, trace = inner_adapt(ctx, params, cfg, rng)
        rng.bit_generator.state = state
        for _ in range(cfg.eta):
            masks["inner"].append((_mask(ctx, cfg, rng), _mask(ctx, cfg, rng)))
        masks["query"] = _mask(ctx, cfg, rng)
        masks["structure"] = _mask(ctx, cfg, rng)
        g_G, g_S, lq_value, _ = _second_order_grads(ctx, params, cfg, masks)
    else:
        adapted, trace = inner_adapt(ctx, params, cfg, rng)
        mask_q = _mask(ctx, cfg, rng)
        with torch.no_grad():
            A = adjacency(ctx, adapted.theta_S)
        lq = compute_gradients(lambda p: query_loss(ctx, p, mask_q, A), adapted, ("theta_G",))
        mask_s = _mask(ctx, cfg, rng)
        ls = compute_gradients(lambda p: structure_loss(ctx, p, cfg, mask_s), adapted, ("theta_S",))
        g_G, g_S, lq_value = lq.gradients, ls.gradients, lq.value

    base = params if cfg.classic_maml else adapted
    new_G = {k: v - cfg.beta1 * (g_G[k] + cfg.weight_decay * v) for k, v in base.theta_G.items()}
    new_S = _step(base.theta_S, g_S, cfg.beta2)
    record = EpisodeRecord(-1, trace.structure_losses, trace.support_losses, lq_value,
                           query_accuracy(ctx, adapted), ctx.episode.graph_id, ctx.episode.class_slots)
    return ParameterSet(new_S, new_G), record


def evaluate_episode(ctx: TaskContext, params: ParameterSet, cfg: TrainConfig, rng) -> float:
    """Adapt a copy of ``params`` on the support set and score the query set."""
    adapted, _ = inner_adapt(ctx, params, cfg, rng)
    return query_accuracy(ctx, adapted)


# ---------------------------------------------------------------- training loop

@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    validation: list = field(default_factory=list)   # (episodes seen, mean val accuracy)
    wall_time: float = 0.0

    def same_as(self, other: "TrainLog") -> bool:
        return ([r.to_dict() for r in self.records] == [r.to_dict() for r in other.records]
                and self.validation == other.validation)


def split_for(dataset, cfg: TrainConfig):
    # validation may hold fewer than N classes; it then runs narrower episodes
    return make_split(dataset, cfg.setting, cfg.class_ratios, seed=cfg.seed,
                      graph_ratios=cfg.graph_ratios, n_way=cfg.N, check_phases=("train", "test"))


def validate(dataset, split, params, cfg: TrainConfig) -> float:
    accs = []
    n_way = min(cfg.N, len(split.val_classes))
    if n_way < 2:
        return float("nan")
    for j in range(cfg.val_episodes):
        rng = episode_rng(cfg.seed, "val", 0, j)
        ep = sample_episode(dataset, split, "val", n_way, cfg.K, cfg.Q, rng)
        accs.append(evaluate_episode(make_task_context(dataset, ep, cfg), params, cfg, rng))
    return float(np.mean(accs))


def train(dataset, cfg: TrainConfig, on_record: Optional[Callable] = None):
    """Meta-train on ``cfg.epochs`` sequential episodes; returns (Checkpoint, TrainLog)."""
    start = time.perf_counter()
    split = split_for(dataset, cfg)
    params = init_params(dataset.feature_dim, cfg)
    tlog = TrainLog()
    for i in range(cfg.epochs):
        rng = episode_rng(cfg.seed, "train", i)
        try:
            ep = sample_episode(dataset, split, "train", cfg.N, cfg.K, cfg.Q, rng)
        except Exception as e:
            raise TrainingError(f"episode {i}: sampling failed: {e}") from e
        ctx = make_task_context(dataset, ep, cfg)
        params, rec = meta_update(ctx, params, cfg, rng)
        rec.episode = i
        tlog.records.append(rec)
        if on_record is not None:
            on_record(rec)
        if cfg.val_every > 0 and cfg.val_episodes > 0 and (i + 1) % cfg.val_every == 0:
            acc = validate(dataset, split, params, cfg)
            tlog.validation.append((i + 1, acc))
            log.info("episode %d: val acc %.4f", i + 1, acc)
    tlog.wall_time = time.perf_counter() - start
    ckpt = params.to_checkpoint(cfg.to_dict(), dataset.feature_dim,
                                {"seed": cfg.seed, "episodes_consumed": cfg.epochs})
    return ckpt, tlog
