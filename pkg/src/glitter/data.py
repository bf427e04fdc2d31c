"""Datasets, the synthetic SBM generator, and checkpoint files.

On-disk dataset layout (a directory)::

    meta.json          {"name", "feature_dim", "class_universe", "graph_count"}
    graph_0000.json    {"graph_id", "node_count", "edges": [[u, v], ...],
                        "features": [[...], ...], "labels": [int | null, ...]}
    ...

Floats are written with Python's shortest round-trip repr, so reloading is
exact. Checkpoints are a single JSON document of named arrays, each stored as
``{"shape": [...], "values": [...]}`` with 17 significant digits.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ParseError, SchemaError
from .graph import Graph

THETA_S_NAMES = ("W1", "W2", "psi_table")
THETA_G_NAMES = ("gcn_W1", "gcn_W2", "clf_W", "clf_b")
CHECKPOINT_FORMAT = "glitter-checkpoint/1"


@dataclass(eq=False)
class Dataset:
    graphs: list
    feature_dim: int
    class_universe: list
    name: str = "dataset"

    def __post_init__(self):
        if not self.graphs:
            raise SchemaError(f"dataset {self.name!r} has no graphs")
        self.class_universe = sorted(int(c) for c in self.class_universe)
        universe = set(self.class_universe)
        for g in self.graphs:
            if g.feature_dim != self.feature_dim:
                raise SchemaError(
                    f"graph {g.graph_id}: feature dim {g.feature_dim} != dataset feature_dim {self.feature_dim}")
            stray = g.label_set() - universe
            if stray:
                raise SchemaError(f"graph {g.graph_id}: labels {sorted(stray)} not in class universe")

    def graph(self, graph_id: int) -> Graph:
        for g in self.graphs:
            if g.graph_id == graph_id:
                return g
        raise KeyError(f"no graph with id {graph_id}")

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.name == other.name and self.feature_dim == other.feature_dim
                and self.class_universe == other.class_universe
                and len(self.graphs) == len(other.graphs)
                and all(a == b for a, b in zip(self.graphs, other.graphs)))


@dataclass
class SBMConfig:
    num_graphs: int = 1
    classes_per_graph: int = 10
    nodes_per_class: int = 30
    p_intra: float = 0.2
    p_inter: float = 0.01
    feature_dim: int = 16
    center_scale: float = 1.0
    noise_sigma: float = 1.0
    seed: int = 0

    def validate(self):
        if min(self.num_graphs, self.classes_per_graph, self.nodes_per_class, self.feature_dim) < 1:
            raise ValueError("SBMConfig: counts must be positive")
        if not (0 <= self.p_inter < self.p_intra <= 1):
            raise ValueError(
                f"SBMConfig: need 0 <= p_inter < p_intra <= 1, got p_inter={self.p_inter}, p_intra={self.p_intra}")
        if not self.noise_sigma > 0:
            raise ValueError("SBMConfig: noise_sigma must be positive")
        if self.center_scale < 0:
            raise ValueError("SBMConfig: center_scale must be non-negative")


def generate_sbm_dataset(cfg: SBMConfig, name: str = "sbm") -> Dataset:
    """Stochastic block model graphs with Gaussian class-centred features.

    Every graph carries all ``classes_per_graph`` classes (one shared class
    universe), node ids are randomly permuted, and a class centre is drawn once
    per class and reused by every graph.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    c, s, d = cfg.classes_per_graph, cfg.nodes_per_class, cfg.feature_dim
    centers = cfg.center_scale * rng.standard_normal((c, d))
    n = c * s

    graphs = []
    for gid in range(cfg.num_graphs):
        perm = rng.permutation(n)
        labels = np.empty(n, dtype=np.int64)
        labels[perm] = np.repeat(np.arange(c), s)

        iu, ju = np.triu_indices(n, k=1)
        same = labels[iu] == labels[ju]
        prob = np.where(same, cfg.p_intra, cfg.p_inter)
        keep = rng.random(iu.size) < prob
        edges = np.stack([iu[keep], ju[keep]], axis=1)

        feats = centers[labels] + cfg.noise_sigma * rng.standard_normal((n, d))
        graphs.append(Graph.build(gid, n, edges, feats, labels.tolist()))
    return Dataset(graphs, d, list(range(c)), name)


# ---------------------------------------------------------------- dataset files

def _graph_record(g: Graph) -> dict:
    return {
        "graph_id": g.graph_id,
        "node_count": g.node_count,
        "edges": g.edges.tolist(),
        "features": g.features.tolist(),
        "labels": list(g.labels),
    }


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": dataset.name,
        "feature_dim": dataset.feature_dim,
        "class_universe": dataset.class_universe,
        "graph_count": len(dataset.graphs),
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    for i, g in enumerate(dataset.graphs):
        (path / f"graph_{i:04d}.json").write_text(json.dumps(_graph_record(g)) + "\n")


def _read_json(file: Path):
    try:
        return json.loads(file.read_text())
    except FileNotFoundError:
        raise ParseError(f"{file}: missing file") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"{file}: malformed JSON ({e})") from None


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta = _read_json(path / "meta.json")
    try:
        name = str(meta["name"])
        feature_dim = int(meta["feature_dim"])
        universe = [int(c) for c in meta["class_universe"]]
        count = int(meta["graph_count"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path / 'meta.json'}: bad meta record ({e!r})") from None
    if count < 1:
        raise SchemaError(f"{path}: dataset declares {count} graphs")

    graphs = []
    for i in range(count):
        file = path / f"graph_{i:04d}.json"
        rec = _read_json(file)
        try:
            node_count = int(rec["node_count"])
            edges = [(int(u), int(v)) for u, v in rec["edges"]]
            features = np.array(rec["features"], dtype=np.float64)
            labels = [None if y is None else int(y) for y in rec["labels"]]
            gid = int(rec["graph_id"])
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{file}: bad graph record ({e!r})") from None
        if features.ndim != 2 or features.shape != (node_count, feature_dim):
            raise SchemaError(
                f"{file}: features have shape {features.shape}, expected ({node_count}, {feature_dim})")
        try:
            graphs.append(Graph.build(gid, node_count, edges, features, labels))
        except ValueError as e:
            raise SchemaError(f"{file}: {e}") from None
    return Dataset(graphs, feature_dim, universe, name)


# ---------------------------------------------------------------- checkpoints

@dataclass(eq=False)
class Checkpoint:
    theta_S: dict
    theta_G: dict
    config: dict
    feature_dim: int
    rng_state: dict = field(default_factory=dict)

    def expected_shapes(self) -> dict:
        return expected_shapes(self.config, self.feature_dim)

    def validate(self):
        shapes = self.expected_shapes()
        for group in (self.theta_S, self.theta_G):
            for key, arr in group.items():
                if key not in shapes:
                    raise SchemaError(f"checkpoint: unexpected tensor {key!r}")
                if tuple(arr.shape) != shapes[key]:
                    raise SchemaError(
                        f"checkpoint: tensor {key!r} has shape {tuple(arr.shape)}, config implies {shapes[key]}")
                if not np.all(np.isfinite(arr)):
                    raise SchemaError(f"checkpoint: tensor {key!r} has non-finite values")
        missing = set(shapes) - set(self.theta_S) - set(self.theta_G)
        if missing:
            raise SchemaError(f"checkpoint: missing tensors {sorted(missing)}")


def expected_shapes(config: dict, feature_dim: int) -> dict:
    d, da, hid, n = feature_dim, config["d_a"], config["hidden_dim"], config["N"]
    return {
        "W1": (da, d), "W2": (da, d), "psi_table": (config["D_max"] + 2,),
        "gcn_W1": (d, hid), "gcn_W2": (hid, hid), "clf_W": (hid, n), "clf_b": (n,),
    }


def _encode_array(a: np.ndarray) -> str:
    vals = ", ".join(format(float(v), ".17g") for v in np.asarray(a, dtype=np.float64).ravel())
    return '{"shape": %s, "values": [%s]}' % (json.dumps(list(a.shape)), vals)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    ckpt.validate()
    head = {
        "format": CHECKPOINT_FORMAT,
        "feature_dim": ckpt.feature_dim,
        "config": ckpt.config,
        "rng_state": ckpt.rng_state,
    }
    parts = []
    for group_name, group in (("theta_S", ckpt.theta_S), ("theta_G", ckpt.theta_G)):
        body = ",\n".join(f'  "{k}": {_encode_array(v)}' for k, v in group.items())
        parts.append(f'"{group_name}": {{\n{body}\n}}')
    text = json.dumps(head, indent=1)[:-2] + ",\n" + ",\n".join(parts) + "\n}\n"
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def load_checkpoint(path, config: Optional[dict] = None) -> Checkpoint:
    """Read a checkpoint; if ``config`` is given, its model shape keys must agree."""
    doc = _read_json(Path(path))
    try:
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ParseError(f"{path}: not a checkpoint (format={doc.get('format')!r})")
        groups = {}
        for group_name in ("theta_S", "theta_G"):
            groups[group_name] = {
                k: np.array(v["values"], dtype=np.float64).reshape(v["shape"])
                for k, v in doc[group_name].items()
            }
        ckpt = Checkpoint(groups["theta_S"], groups["theta_G"], dict(doc["config"]),
                          int(doc["feature_dim"]), dict(doc.get("rng_state", {})))
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise ParseError(f"{path}: bad checkpoint record ({e!r})") from None
    if config is not None:
        for key in ("hidden_dim", "d_a", "D_max", "N"):
            if key in config and config[key] != ckpt.config.get(key):
                raise SchemaError(
                    f"{path}: checkpoint {key}={ckpt.config.get(key)} but config has {key}={config[key]}")
    ckpt.validate()
    return ckpt


def checkpoint_equal(a: Checkpoint, b: Checkpoint) -> bool:
    if a.config != b.config or a.feature_dim != b.feature_dim:
        return False
    for ga, gb in ((a.theta_S, b.theta_S), (a.theta_G, b.theta_G)):
        if set(ga) != set(gb):
            return False
        if any(not np.array_equal(ga[k], gb[k]) for k in ga):
            return False
    return True

