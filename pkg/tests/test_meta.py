import numpy as np
import pytest
import torch

from glitter.config import ConfigError, TrainConfig
from glitter.data import SBMConfig, checkpoint_equal, generate_sbm_dataset
from glitter.influence import (build_absorbing_chain, class_influence_loss,
                               truncated_absorbing_probs)
from glitter.meta import (adjacency, inner_adapt, meta_update, query_loss, structure_loss,
                          structure_loss_parts, support_loss, train)
from glitter.mi import mutual_info_loss, query_class_distribution
from glitter.model import ParameterSet, compute_gradients, gcn_forward, init_params
from glitter.verify import small_context


def rng0():
    return np.random.default_rng(123)


@pytest.fixture(scope="module")
def tiny_dataset():
    return generate_sbm_dataset(SBMConfig(classes_per_graph=6, nodes_per_class=10, p_intra=0.3,
                                          p_inter=0.02, feature_dim=4, seed=3))


def tiny_cfg(**kw):
    base = dict(N=2, K=2, Q=4, h=1, C=2, eta=2, hidden_dim=4, d_a=3, D_max=4, epochs=3,
                class_ratios=(0.5, 0.17, 0.33), val_every=0)
    base.update(kw)
    return TrainConfig(**base)


# ---------------------------------------------------------------- structure loss

def test_structure_loss_is_sum_of_parts():
    ctx, params, cfg, mask = small_context(1)
    A = adjacency(ctx, params.theta_S)
    l_n = class_influence_loss(gcn_forward(A, ctx.X_T, params.theta_G, mask=mask), ctx.task.support_by_class)
    chain = build_absorbing_chain(A, ctx.task.support_index)
    dist = query_class_distribution(truncated_absorbing_probs(chain, cfg.m), ctx.support_labels,
                                    list(range(len(ctx.query_rows))), cfg.N)
    expected = float(l_n) + float(mutual_info_loss(dist))
    assert float(structure_loss(ctx, params, cfg, mask)) == pytest.approx(expected, abs=1e-12)


def test_structure_loss_degenerate_case():
    # one class, identical features, W1 = W2, zero psi: uniform chain and identical rows
    ctx, params, cfg, _ = small_context(2)
    ctx.X_T = torch.ones_like(ctx.X_T)
    params.theta_S["W2"] = params.theta_S["W1"] = params.theta_S["W1"].abs()
    params.theta_S["psi_table"] = torch.zeros_like(params.theta_S["psi_table"])
    ctx.task.support_by_class = [[0, 1, 2]]
    ctx.task.support_index = [0, 1, 2]
    ctx.task.query_index = [3, 4]
    ctx.support_labels = [0, 0, 0]
    cfg1 = cfg.replace()
    cfg1.N = 1
    # identical rows: L_N = K((K-1)(n-K) - (K-2)(K-1))/(n-1); K=3, n=6 here
    l_n, l_m = structure_loss_parts(ctx, params, cfg1)
    assert float(l_m) == pytest.approx(0.0, abs=1e-12)
    assert float(l_n) == pytest.approx(3 * (2 * 3 - 1 * 2) / 5, abs=1e-12)


def test_structure_loss_flags():
    ctx, params, cfg, mask = small_context(3)
    l_n, l_m = structure_loss_parts(ctx, params, cfg, mask)
    assert float(structure_loss_parts(ctx, params, cfg.replace(use_mi_loss=False), mask)[1]) == 0.0
    assert float(structure_loss_parts(ctx, params, cfg.replace(use_influence_loss=False), mask)[0]) == 0.0
    assert float(structure_loss(ctx, params, cfg.replace(use_influence_loss=False), mask)) == float(l_m)


# ---------------------------------------------------------------- inner adaptation

def test_alpha_zero_is_identity():
    ctx, params, cfg, _ = small_context(4)
    adapted, trace = inner_adapt(ctx, params, cfg.replace(alpha=0.0, eta=3), rng0())
    assert adapted.equal(params)
    assert len(trace.structure_losses) == len(trace.support_losses) == 3


def test_single_step_trace():
    ctx, params, cfg, _ = small_context(5)
    _, trace = inner_adapt(ctx, params, cfg.replace(eta=1), rng0())
    assert len(trace.structure_losses) == 1


def _manual_inner(ctx, params, cfg, rng, steps):
    from glitter.model import dropout_mask
    S = {k: v.clone() for k, v in params.theta_S.items()}
    G = {k: v.clone() for k, v in params.theta_G.items()}
    for _ in range(steps):
        ms = dropout_mask((ctx.size, cfg.hidden_dim), cfg.dropout_rate, rng)
        gs = compute_gradients(lambda p: structure_loss(ctx, p, cfg, ms), ParameterSet(S, G), ("theta_S",))
        S = {k: S[k] - cfg.alpha * gs.gradients[k] for k in S}
        mg = dropout_mask((ctx.size, cfg.hidden_dim), cfg.dropout_rate, rng)
        A = adjacency(ctx, S).detach()
        gg = compute_gradients(lambda p: support_loss(ctx, p, mg, A), ParameterSet(S, G), ("theta_G",))
        G = {k: G[k] - cfg.alpha * gg.gradients[k] for k in G}
    return ParameterSet(S, G)


def test_two_step_manual_replay():
    ctx, params, cfg, _ = small_context(6)
    cfg = cfg.replace(eta=2)
    adapted, _ = inner_adapt(ctx, params, cfg, np.random.default_rng(9))
    manual = _manual_inner(ctx, params, cfg, np.random.default_rng(9), 2)
    assert adapted.equal(manual)


def test_inner_adapt_does_not_mutate_input():
    ctx, params, cfg, _ = small_context(7)
    before = params.digest()
    inner_adapt(ctx, params, cfg.replace(eta=3), rng0())
    assert params.digest() == before


def test_support_loss_mostly_non_increasing(tiny_dataset):
    from glitter.evaluation import episode_stream
    from glitter.meta import make_task_context, split_for
    cfg = tiny_cfg(eta=8, alpha=0.05, dropout_rate=0.0)
    split = split_for(tiny_dataset, cfg)
    params = init_params(tiny_dataset.feature_dim, cfg)
    ok = total = 0
    for _, _, ep, rng in episode_stream(tiny_dataset, split, cfg, 1, 15, phase="train"):
        _, trace = inner_adapt(make_task_context(tiny_dataset, ep, cfg), params, cfg, rng)
        s = trace.support_losses
        ok += all(b <= a + 1e-9 for a, b in zip(s, s[1:]))
        total += 1
    assert ok / total >= 0.8


# ---------------------------------------------------------------- meta update

def test_zero_meta_rates_keep_adapted():
    ctx, params, cfg, _ = small_context(8)
    cfg = cfg.replace(beta1=0.0, beta2=0.0, weight_decay=0.0)
    new, _ = meta_update(ctx, params, cfg, np.random.default_rng(1))
    adapted, _ = inner_adapt(ctx, params, cfg, np.random.default_rng(1))
    assert new.equal(adapted)


def test_full_null_update():
    ctx, params, cfg, _ = small_context(9)
    new, _ = meta_update(ctx, params, cfg.replace(alpha=0.0, beta1=0.0, beta2=0.0), rng0())
    assert new.equal(params)


def test_meta_update_manual_replay():
    ctx, params, cfg, _ = small_context(10)
    cfg = cfg.replace(eta=1, weight_decay=1e-3)
    from glitter.model import dropout_mask
    new, rec = meta_update(ctx, params, cfg, np.random.default_rng(4))
    rng = np.random.default_rng(4)
    adapted = _manual_inner(ctx, params, cfg, rng, 1)
    mq = dropout_mask((ctx.size, cfg.hidden_dim), cfg.dropout_rate, rng)
    A = adjacency(ctx, adapted.theta_S).detach()
    gq = compute_gradients(lambda p: query_loss(ctx, p, mq, A), adapted, ("theta_G",)).gradients
    ms = dropout_mask((ctx.size, cfg.hidden_dim), cfg.dropout_rate, rng)
    gs = compute_gradients(lambda p: structure_loss(ctx, p, cfg, ms), adapted, ("theta_S",)).gradients
    G = {k: v - cfg.beta1 * (gq[k] + cfg.weight_decay * v) for k, v in adapted.theta_G.items()}
    S = {k: v - cfg.beta2 * gs[k] for k, v in adapted.theta_S.items()}
    assert new.equal(ParameterSet(S, G))
    assert len(rec.structure_losses) == 1


def test_classic_maml_starts_from_initial_params():
    ctx, params, cfg, _ = small_context(11)
    cfg = cfg.replace(classic_maml=True, beta1=0.0, beta2=0.0, weight_decay=0.0)
    new, _ = meta_update(ctx, params, cfg, rng0())
    assert new.equal(params)


def test_second_order_matches_first_order_when_alpha_zero():
    ctx, params, cfg, _ = small_context(12)
    a, _ = meta_update(ctx, params, cfg.replace(classic_maml=True, alpha=0.0), np.random.default_rng(2))
    b, _ = meta_update(ctx, params, cfg.replace(classic_maml=True, alpha=0.0, first_order=False),
                       np.random.default_rng(2))
    for k, v in a.named().items():
        assert torch.allclose(v, b.named()[k], atol=1e-12)


def test_second_order_differs_with_alpha():
    ctx, params, cfg, _ = small_context(13)
    a, _ = meta_update(ctx, params, cfg.replace(classic_maml=True, eta=2), np.random.default_rng(2))
    b, _ = meta_update(ctx, params, cfg.replace(classic_maml=True, eta=2, first_order=False),
                       np.random.default_rng(2))
    assert not a.equal(b)


# ---------------------------------------------------------------- training loop

def test_zero_epochs_returns_init(tiny_dataset):
    cfg = tiny_cfg(epochs=0)
    ckpt, log = train(tiny_dataset, cfg)
    init = init_params(tiny_dataset.feature_dim, cfg)
    assert ParameterSet.from_checkpoint(ckpt).equal(init)
    assert log.records == []


def test_train_is_deterministic(tiny_dataset):
    cfg = tiny_cfg(epochs=3, val_every=2, val_episodes=2, class_ratios=(0.34, 0.33, 0.33))
    a, la = train(tiny_dataset, cfg)
    b, lb = train(tiny_dataset, cfg)
    assert checkpoint_equal(a, b) and la.same_as(lb)
    assert len(la.records) == 3 and len(la.validation) == 1
    assert all(len(r.support_losses) == cfg.eta for r in la.records)
    c, _ = train(tiny_dataset, cfg.replace(seed=1))
    assert not checkpoint_equal(a, c)


def test_train_records_stream(tiny_dataset):
    seen = []
    train(tiny_dataset, tiny_cfg(epochs=2), on_record=lambda r: seen.append(r.to_dict()))
    assert [r["episode"] for r in seen] == [0, 1]
    assert set(seen[0]) == {"episode", "graph_id", "class_slots", "L_S", "L_support", "L_query", "query_accuracy"}


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(eta=0)
    with pytest.raises(ConfigError):
        TrainConfig(N=1)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": 1})
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()
