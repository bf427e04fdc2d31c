"""Class/graph splits for the four evaluation regimes and N-way K-shot episodes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SETTINGS, ConfigError
from .errors import SamplingError

PHASES = ("train", "val", "test")
_PHASE_CODE = {"train": 0, "val": 1, "test": 2, "protonet": 3}


@dataclass(frozen=True)
class SplitSpec:
    train_classes: frozenset
    val_classes: frozenset
    test_classes: frozenset
    train_graphs: frozenset
    val_graphs: frozenset
    test_graphs: frozenset
    setting: str

    def classes(self, phase: str) -> frozenset:
        return getattr(self, f"{phase}_classes")

    def graphs(self, phase: str) -> frozenset:
        return getattr(self, f"{phase}_graphs")


@dataclass(frozen=True)
class Episode:
    graph_id: int
    class_slots: tuple
    support: tuple      # N rows of K node ids, row i belongs to class_slots[i]
    query: tuple
    query_slots: tuple
    phase: str

    @property
    def N(self) -> int:
        return len(self.class_slots)

    @property
    def K(self) -> int:
        return len(self.support[0])

    def support_flat(self) -> list:
        return [v for row in self.support for v in row]

    def support_slots(self) -> list:
        return [i for i, row in enumerate(self.support) for _ in row]


def _partition(items, ratios, rng):
    items = list(items)
    order = [items[i] for i in rng.permutation(len(items))]
    n_train = int(round(ratios[0] * len(items)))
    n_val = int(round(ratios[1] * len(items)))
    if n_train + n_val > len(items):
        n_val = len(items) - n_train
    return (frozenset(order[:n_train]), frozenset(order[n_train:n_train + n_val]),
            frozenset(order[n_train + n_val:]))


def make_split(dataset, setting: str, ratios=(0.5, 0.2, 0.3), seed: int = 0,
               graph_ratios=None, n_way=None, check_phases=PHASES) -> SplitSpec:
    """Split classes and/or graphs across train/val/test for ``setting``.

    ``ratios`` partitions whatever is disjoint in the setting; graphs use
    ``graph_ratios`` when given. With ``n_way`` set, the class set of every
    phase in ``check_phases`` must hold at least that many classes.
    """
    if setting not in SETTINGS:
        raise ConfigError(f"unknown setting {setting!r}")
    graph_ratios = ratios if graph_ratios is None else graph_ratios
    rng = np.random.default_rng(seed)
    classes = list(dataset.class_universe)
    graph_ids = [g.graph_id for g in dataset.graphs]

    if setting.endswith("disjoint-label"):
        cls_sets = _partition(classes, ratios, rng)
    else:
        cls_sets = (frozenset(classes),) * 3

    if setting.startswith("disjoint-graph"):
        if len(graph_ids) < 3:
            raise ConfigError(f"setting {setting} needs at least 3 graphs, dataset has {len(graph_ids)}")
        graph_sets = _partition(graph_ids, graph_ratios, rng)
    elif setting == "single-graph-disjoint-label":
        graph_sets = (frozenset(graph_ids[:1]),) * 3
    else:
        graph_sets = (frozenset(graph_ids),) * 3

    for phase, cs, gs in zip(PHASES, cls_sets, graph_sets):
        if not gs:
            raise ConfigError(f"{setting}: no graphs left for phase {phase}")
        if n_way is not None and phase in check_phases and len(cs) < n_way:
            raise ConfigError(f"{setting}: phase {phase} has {len(cs)} classes, fewer than N={n_way}")
    return SplitSpec(*cls_sets, *graph_sets, setting)


def episode_rng(seed: int, phase: str, *index: int) -> np.random.Generator:
    """Independent substream for one episode; reproducible regardless of order."""
    return np.random.default_rng([int(seed), _PHASE_CODE[phase], *map(int, index)])


def query_allocation(N: int, Q: int) -> list:
    base, rem = divmod(Q, N)
    return [base + (1 if i < rem else 0) for i in range(N)]


def sample_episode(dataset, split: SplitSpec, phase: str, N: int, K: int, Q: int,
                   rng: np.random.Generator) -> Episode:
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    graph_ids = sorted(split.graphs(phase))
    gid = graph_ids[rng.integers(len(graph_ids))]
    graph = dataset.graph(gid)

    need = K + math.ceil(Q / N)
    pools = {}
    short = []
    for c in sorted(split.classes(phase)):
        nodes = graph.nodes_with_label(c)
        if len(nodes) >= need:
            pools[c] = nodes
        else:
            short.append((c, len(nodes)))
    if len(pools) < N:
        detail = ", ".join(f"class {c} has {k}" for c, k in short[:5])
        raise SamplingError(
            f"graph {gid} ({phase}): only {len(pools)} classes have >= {need} labelled nodes, "
            f"need {N}; {detail}")

    eligible = sorted(pools)
    chosen = sorted(eligible[i] for i in rng.choice(len(eligible), size=N, replace=False))
    alloc = query_allocation(N, Q)
    support, query, query_slots = [], [], []
    for slot, c in enumerate(chosen):
        pool = pools[c]
        picks = rng.choice(len(pool), size=K + alloc[slot], replace=False)
        nodes = [pool[i] for i in picks]
        support.append(tuple(nodes[:K]))
        query.extend(nodes[K:])
        query_slots.extend([slot] * alloc[slot])
    return Episode(gid, tuple(chosen), tuple(support), tuple(query), tuple(query_slots), phase)
