"""Executable oracle suites backing ``glitter verify`` and the acceptance tests.

Each suite returns a list of :class:`Check` results; nothing here raises on a
failed comparison.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .config import TrainConfig
from .data import SBMConfig, checkpoint_equal, generate_sbm_dataset
from .episodes import Episode
from .graph import Graph, spd_submatrix
from .influence import (build_absorbing_chain, class_influence_loss, exact_absorbing_probs,
                        geometric_mean_influence, linear_propagation_influence,
                        truncated_absorbing_probs)
from .meta import TaskContext, query_loss, structure_loss_parts, support_loss
from .mi import mutual_info_loss, query_class_distribution
from .model import ParameterSet, compute_gradients, cross_entropy, dropout_mask, gcn_forward, init_params
from .structure import (TaskStructure, assemble_task_nodes, build_adjacency, common_sample,
                        init_structure_params, local_sample, task_features)

SUITES = ("theorems", "gradients", "sampling")

# sparse enough that a task structure stays near 70 nodes
REPRO_SBM = SBMConfig(num_graphs=1, classes_per_graph=10, nodes_per_class=30, p_intra=0.1, p_inter=0.001,
                      feature_dim=16, center_scale=0.5, noise_sigma=0.5, seed=1)
REPRO_CONFIG = TrainConfig(N=3, K=3, class_ratios=(0.5, 0.2, 0.3), epochs=300, val_every=0)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0
    data: dict = field(default_factory=dict, repr=False)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(name: str, fn: Callable[[], tuple]) -> Check:
    t0 = time.perf_counter()
    passed, detail, data = fn()
    return Check(name, bool(passed), detail, time.perf_counter() - t0, data)


# ---------------------------------------------------------------- random instances

def random_graph(n: int, p: float, rng: np.random.Generator, d: int = 4, labels=None) -> Graph:
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return Graph.build(0, n, np.stack([iu[keep], ju[keep]], 1), rng.standard_normal((n, d)), labels)


def random_task_chain(seed: int, max_nodes: int = 20, support_range=(2, 5)):
    """A task adjacency from the structure learner on a random graph, and its chain.

    Support states are the first ``|S|`` task nodes.
    """
    rng = np.random.default_rng([seed, 31])
    n_sup = int(rng.integers(support_range[0], support_range[1] + 1))
    n = int(rng.integers(n_sup + 1, max_nodes + 1))
    d = 8
    g = random_graph(n, float(rng.uniform(0.1, 0.5)), rng, d=d)
    nodes = rng.permutation(n).tolist()
    task = TaskStructure(nodes, spd_submatrix(g, nodes), list(range(n_sup)), [], [])
    params = init_structure_params(d, 16, 10, rng)
    params["psi_table"] = params["psi_table"] + torch.tensor(rng.normal(0, 0.5, params["psi_table"].shape))
    with torch.no_grad():
        A = build_adjacency(task, task_features(g, task), params)
    return A, build_absorbing_chain(A, task.support_index)


# ---------------------------------------------------------------- theorems

def check_linear_propagation(n_chains: int = 30, L: int = 200, tol: float = 1e-6, seed: int = 0) -> Check:
    def run():
        worst = 0.0
        for i in range(n_chains):
            _, ch = random_task_chain(seed * 1000 + i)
            P = linear_propagation_influence(ch.A_tilde, L)[ch.transient][:, ch.absorbing]
            worst = max(worst, float((P - exact_absorbing_probs(ch)).abs().max()))
        return worst < tol, f"max |(A~^{L})_ij - B_ij| = {worst:.3e} over {n_chains} chains (tol {tol:g})", \
            {"max_error": worst}
    return _timed("linear propagation influence equals absorption probability", run)


def check_truncation(n_chains: int = 30, seed: int = 0, rho_cap: float = 0.9) -> list:
    """Monotone/bounded truncation, deep-truncation accuracy and the geometric tail ratio.

    The remainder satisfies E(m+3) = Q^3 E(m), hence ||E(5)|| <= rho^3 ||E(2)||
    with rho the largest row sum of Q.
    """
    mono = {"bad": 0}
    deep = []
    tail = {"checked": 0, "bad": 0}

    def sweep():
        for i in range(n_chains):
            _, ch = random_task_chain(seed * 1000 + i)
            B = exact_absorbing_probs(ch)
            prev = torch.zeros_like(B)
            errs = {}
            for m in range(51):
                cur = truncated_absorbing_probs(ch, m)
                if bool((cur < prev - 1e-15).any()) or bool((cur > B + 1e-12).any()):
                    mono["bad"] += 1
                errs[m] = float((B - cur).abs().max())
                prev = cur
            rho = float(ch.Q_block.sum(1).max()) if ch.t else 0.0
            deep.append((errs[50], rho, ch.t, len(ch.absorbing)))
            if rho <= rho_cap:
                tail["checked"] += 1
                if errs[5] > rho ** 3 * errs[2] + 1e-15:
                    tail["bad"] += 1

    t0 = time.perf_counter()
    sweep()
    dt = time.perf_counter() - t0
    worst = max(e for e, *_ in deep)
    n_over = sum(e >= 1e-8 for e, *_ in deep)
    return [
        Check("truncated absorption is monotone in m and bounded by exact", mono["bad"] == 0,
              f"{mono['bad']} violations over {n_chains} chains, m=0..50", dt),
        Check("truncation depth 50 is within 1e-8 of exact", n_over == 0,
              f"{n_over}/{n_chains} chains exceed; worst {worst:.3e}", 0.0,
              {"per_chain": deep}),
        Check("error ratio between m=2 and m=5 meets the geometric tail", tail["bad"] == 0,
              f"{tail['bad']} of {tail['checked']} chains with row sums <= {rho_cap} violate", 0.0),
    ]


def check_chain_invariants(n: int = 1000, seed: int = 0) -> list:
    def adj():
        bad, lo, hi = 0, 1.0, 0.0
        for i in range(n):
            A, _ = random_task_chain(seed * 100_000 + i, max_nodes=12)
            lo, hi = min(lo, float(A.min())), max(hi, float(A.max()))
            bad += int(not bool(((A > 0) & (A <= 1)).all()))
        return bad == 0, f"{bad}/{n} adjacencies outside (0,1]; range [{lo:.3g}, {hi:.3g}]", {}

    def chains():
        worst, bad_abs = 0.0, 0
        for i in range(n):
            _, ch = random_task_chain(seed * 100_000 + n + i, max_nodes=12)
            worst = max(worst, float((ch.A_tilde.sum(1) - 1).abs().max()))
            eye = torch.eye(ch.A_tilde.shape[0], dtype=ch.A_tilde.dtype)
            if not torch.equal(ch.A_tilde[ch.absorbing], eye[ch.absorbing]):
                bad_abs += 1
        return worst <= 1e-12 and bad_abs == 0, \
            f"max |row sum - 1| = {worst:.2e}; {bad_abs} non one-hot absorbing rows", {}

    return [_timed("learned adjacency entries lie in (0,1]", adj),
            _timed("chain rows are stochastic with one-hot absorbing rows", chains)]


def check_analytic_losses(tol: float = 1e-9) -> list:
    out = []
    H = torch.tensor([0.6, 0.8], dtype=torch.float64).repeat(5, 1)
    v = float(class_influence_loss(H, [[0, 1, 2]]))
    out.append(Check("L_N identical representations", abs(v - 1.5) < tol, f"{v!r} vs 1.5"))
    for N in (2, 3, 5):
        u = float(mutual_info_loss(torch.full((6, N), 1.0 / N, dtype=torch.float64)))
        out.append(Check(f"L_M uniform, N={N}", abs(u) < tol, f"{u!r} vs 0"))
        o = float(mutual_info_loss(torch.eye(N, dtype=torch.float64).repeat(2, 1)))
        out.append(Check(f"L_M balanced one-hot, N={N}", abs(o + math.log(N)) < tol, f"{o!r} vs {-math.log(N)!r}"))
        ce = float(cross_entropy(torch.full((1, N), 1.0 / N, dtype=torch.float64), [0], [0]))
        out.append(Check(f"cross-entropy uniform, N={N}", abs(ce - math.log(N)) < tol, f"{ce!r} vs {math.log(N)!r}"))
    return out


def sampling_rationale_diagnostic(n_graphs: int = 20, seed: int = 0) -> Check:
    """Report how geometric-mean influence tracks summed SPD to a class's supports.

    Informational only: the expected relation is negative rank correlation.
    """
    from scipy.stats import spearmanr

    def run():
        rhos = []
        for i in range(n_graphs):
            rng = np.random.default_rng([seed, 41, i])
            g = random_graph(20, 0.15, rng, d=8)
            nodes = list(range(20))
            sup = rng.choice(20, 3, replace=False).tolist()
            order = sup + [v for v in nodes if v not in sup]
            task = TaskStructure(order, spd_submatrix(g, order), [0, 1, 2], [], [])
            with torch.no_grad():
                A = build_adjacency(task, task_features(g, task), init_structure_params(8, 16, 10, rng))
            ch = build_absorbing_chain(A, [0, 1, 2])
            B = exact_absorbing_probs(ch)
            gm = [geometric_mean_influence(B, r, [0, 1, 2])[0] for r in range(ch.t)]
            spd = task.spd_cache.astype(float)
            spd[task.spd_cache == np.iinfo(np.int64).max] = np.inf
            dist = [spd[t, :3].sum() for t in ch.transient]
            finite = np.isfinite(dist)
            if finite.sum() > 3:
                r = spearmanr(np.array(gm)[finite], np.array(dist)[finite]).statistic
                if np.isfinite(r):
                    rhos.append(float(r))
        mean = float(np.mean(rhos)) if rhos else float("nan")
        return True, f"mean Spearman(geo-mean influence, summed SPD) = {mean:.3f} over {len(rhos)} graphs", \
            {"rho": rhos}
    return _timed("sampling rationale diagnostic (report only)", run)


# ---------------------------------------------------------------- gradients

def small_context(seed: int, d: int = 3) -> tuple:
    """A 6-node, 2-way 2-shot episode with 2 queries on a random graph, plus a tiny config."""
    rng = np.random.default_rng([seed, 53])
    labels = [0, 0, 1, 1, 0, 1]
    g = random_graph(6, 0.5, rng, d=d, labels=labels)
    ep = Episode(0, (0, 1), ((0, 1), (2, 3)), (4, 5), (0, 1), "train")
    cfg = TrainConfig(N=2, K=2, Q=2, h=0, C=0, m=2, eta=1, hidden_dim=4, d_a=3, D_max=3, seed=seed)
    task = assemble_task_nodes(g, ep, cfg.h, cfg.C)
    ctx = TaskContext(ep, task, task_features(g, task), ep.support_slots(), list(ep.query_slots))
    params = init_params(d, cfg, seed)
    params.theta_S["psi_table"] = params.theta_S["psi_table"] + torch.tensor(rng.normal(0, 0.3, cfg.D_max + 2))
    params.theta_G["clf_b"] = torch.tensor(rng.normal(0, 0.3, cfg.N))
    mask = dropout_mask((task.size, cfg.hidden_dim), 0.5, rng)
    return ctx, params, cfg, mask


def finite_difference(loss_fn, params: ParameterSet, name: str, step: float = 1e-5) -> torch.Tensor:
    base = params.named()[name]
    fd = torch.zeros_like(base)
    flat = fd.reshape(-1)
    for idx in range(base.numel()):
        vals = []
        for sign in (1.0, -1.0):
            p = params.copy()
            p.named()[name].reshape(-1)[idx] += sign * step
            with torch.no_grad():
                vals.append(float(loss_fn(p)))
        flat[idx] = (vals[0] - vals[1]) / (2 * step)
    return fd


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """max_i |g_i - fd_i| / max(max_i |fd_i|, 1e-8) over one parameter tensor."""
    scale = max(float(numeric.abs().max()), 1e-8)
    return float((analytic - numeric).abs().max()) / scale


def gradient_losses(ctx, cfg, mask) -> dict:
    def l_n(p):
        return structure_loss_parts(ctx, p, cfg.replace(use_mi_loss=False), mask)[0]

    def l_m(p):
        return structure_loss_parts(ctx, p, cfg.replace(use_influence_loss=False), mask)[1]

    def l_s(p):
        a, b = structure_loss_parts(ctx, p, cfg, mask)
        return a + b

    return {"L_N": l_n, "L_M": l_m, "L_S": l_s,
            "L_support": lambda p: support_loss(ctx, p, mask),
            "L_query": lambda p: query_loss(ctx, p, mask)}


def check_gradients(n_episodes: int = 3, seed: int = 0, step: float = 1e-5, tol: float = 1e-4) -> list:
    out = []
    for e in range(n_episodes):
        ctx, params, cfg, mask = small_context(seed * 100 + e)
        for loss_name, fn in gradient_losses(ctx, cfg, mask).items():
            t0 = time.perf_counter()
            lv = compute_gradients(fn, params)
            errs = {k: relative_error(lv.gradients[k], finite_difference(fn, params, k, step))
                    for k in params.named()}
            worst_k = max(errs, key=errs.get)
            out.append(Check(f"{loss_name} gradient, episode {e}", errs[worst_k] < tol,
                             f"worst {worst_k} rel err {errs[worst_k]:.2e}", time.perf_counter() - t0, errs))
    return out


# ---------------------------------------------------------------- sampling

def _all_pairs(g: Graph) -> np.ndarray:
    n = g.node_count
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0)
    for u, v in g.edges:
        D[u, v] = D[v, u] = 1
    for k in range(n):
        D = np.minimum(D, D[:, k, None] + D[None, k, :])
    return D


def check_sampling(n_graphs: int = 50, seed: int = 0) -> list:
    stats = {"local": 0, "common": 0}
    t0 = time.perf_counter()
    for i in range(n_graphs):
        rng = np.random.default_rng([seed, 61, i])
        n = int(rng.integers(6, 26))
        g = random_graph(n, float(rng.uniform(0.03, 0.35)), rng)
        D = _all_pairs(g)
        sup = rng.choice(n, 4, replace=False).tolist()
        h = int(rng.integers(0, 4))
        brute = {u for u in range(n) if min(D[u, s] for s in sup) <= h}
        stats["local"] += local_sample(g, sup, h) != brute
        C = int(rng.integers(0, 5))
        by_class = [sup[:2], sup[2:]]
        exclude = set(sup)
        expect = set()
        for cls in by_class:
            scored = sorted((sum(D[v, s] for s in cls), v) for v in range(n) if v not in exclude)
            expect.update([v for total, v in scored if math.isfinite(total)][:C])
        stats["common"] += common_sample(g, by_class, C, exclude) != expect
    dt = time.perf_counter() - t0
    return [Check("local sampling equals brute-force h-ball union", stats["local"] == 0,
                  f"{stats['local']}/{n_graphs} mismatches", dt),
            Check("common sampling equals exhaustive summed-SPD top-C", stats["common"] == 0,
                  f"{stats['common']}/{n_graphs} mismatches", 0.0)]


# ---------------------------------------------------------------- end to end

def run_reproduction(sbm: SBMConfig = REPRO_SBM, cfg: TrainConfig = REPRO_CONFIG, repetitions: int = 10,
                     episodes: int = 20, workers: int = 1) -> dict:
    """Train and meta-test on one synthetic graph; both baselines see the same episodes."""
    from .evaluation import evaluate, knn_evaluate, protonet_baseline_eval, protonet_baseline_train
    from .meta import train

    ds = generate_sbm_dataset(sbm)
    t0 = time.perf_counter()
    ckpt, tlog = train(ds, cfg)
    t1 = time.perf_counter()
    glitter = evaluate(ckpt, ds, cfg=cfg, repetitions=repetitions, episodes_per_rep=episodes, workers=workers)
    t2 = time.perf_counter()
    proto = protonet_baseline_eval(protonet_baseline_train(ds, cfg), ds, cfg, repetitions, episodes)
    t3 = time.perf_counter()
    knn = knn_evaluate(ds, cfg, repetitions, episodes)
    q = [r.query_accuracy for r in tlog.records]
    return {"glitter": glitter, "protonet": proto, "knn": knn, "train_seconds": t1 - t0,
            "eval_seconds": t2 - t1, "protonet_seconds": t3 - t2, "glitter_seconds": t2 - t0,
            "train_query_acc_first50": float(np.mean(q[:50])) if q else float("nan"),
            "train_query_acc_last50": float(np.mean(q[-50:])) if q else float("nan"), "N": cfg.N}


def check_reproduction(result: dict, margin: float = 0.20, slack: float = 0.02,
                       budget: float = 900.0) -> list:
    g, p = result["glitter"].mean, result["protonet"].mean
    chance = 1.0 / result["N"]
    return [
        Check("GLITTER beats chance by the margin", g >= chance + margin,
              f"{g:.4f} vs chance {chance:.4f} + {margin}", result["glitter_seconds"]),
        Check("GLITTER matches the paired ProtoNet", g >= p - slack,
              f"{g:.4f} vs ProtoNet {p:.4f} - {slack} (KNN {result['knn'].mean:.4f})",
              result["protonet_seconds"]),
        Check("train and meta-test fit the time budget", result["glitter_seconds"] < budget,
              f"{result['glitter_seconds']:.0f}s vs {budget:.0f}s", result["glitter_seconds"]),
    ]


def check_determinism(dataset=None, cfg: TrainConfig | None = None) -> list:
    from .evaluation import evaluate
    from .meta import train

    ds = dataset or generate_sbm_dataset(SBMConfig(classes_per_graph=6, nodes_per_class=12, feature_dim=5,
                                                   p_intra=0.3, seed=4))
    cfg = cfg or TrainConfig(N=2, K=2, Q=4, eta=3, hidden_dim=6, d_a=4, D_max=4, epochs=4,
                             class_ratios=(0.34, 0.33, 0.33), val_every=2, val_episodes=2)

    def same_ckpt():
        a, la = train(ds, cfg)
        b, lb = train(ds, cfg)
        return checkpoint_equal(a, b) and la.same_as(lb), "two seeded runs compared bitwise", {"ckpt": a}

    first = _timed("training twice gives identical checkpoints", same_ckpt)

    def same_report():
        ck = first.data["ckpt"]
        r1 = evaluate(ck, ds, cfg=cfg, repetitions=2, episodes_per_rep=3)
        r2 = evaluate(ck, ds, cfg=cfg, repetitions=2, episodes_per_rep=3)
        return r1 == r2 and r1.to_json() == r2.to_json(), f"mean {r1.mean:.4f} both times", {}

    return [first, _timed("evaluating twice gives identical reports", same_report)]


# ---------------------------------------------------------------- suites

def run_suite(name: str, seed: int = 0) -> list:
    if name == "theorems":
        return ([check_linear_propagation(seed=seed)] + check_truncation(seed=seed)
                + check_chain_invariants(seed=seed) + check_analytic_losses()
                + [sampling_rationale_diagnostic(seed=seed)])
    if name == "gradients":
        return check_gradients(seed=seed)
    if name == "sampling":
        return check_sampling(seed=seed)
    raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
