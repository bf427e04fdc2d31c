import sys
import warnings

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from glitter.graph import Graph

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

torch.set_default_dtype(torch.float64)
warnings.filterwarnings("ignore", message="Converting a tensor with requires_grad=True")


def random_graph(n, p, seed, d=4, labels=None):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    feats = rng.standard_normal((n, d))
    return Graph.build(0, n, np.stack([iu[keep], ju[keep]], 1), feats, labels)


def path_graph(n, d=2):
    return Graph.build(0, n, [(i, i + 1) for i in range(n - 1)], np.zeros((n, d)))


def star_graph(leaves, d=2):
    # center 0, leaves 1..leaves
    return Graph.build(0, leaves + 1, [(0, i) for i in range(1, leaves + 1)], np.zeros((leaves + 1, d)))


def floyd_warshall(graph):
    n = graph.node_count
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0)
    for u, v in graph.edges:
        D[u, v] = D[v, u] = 1
    for k in range(n):
        D = np.minimum(D, D[:, k, None] + D[None, k, :])
    return D


@pytest.fixture
def er12():
    return random_graph(12, 0.3, seed=3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LINES", {}) if mod else {}
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number][1])
