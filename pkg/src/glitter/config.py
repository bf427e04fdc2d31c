"""Run configuration for meta-training, evaluation and baselines."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

SETTINGS = (
    "shared-graph-disjoint-label",
    "disjoint-graph-shared-label",
    "disjoint-graph-disjoint-label",
    "single-graph-disjoint-label",
)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # episode shape
    N: int = 3
    K: int = 3
    Q: int = 10
    # task-structure extraction
    h: int = 2
    C: int = 10
    m: int = 2
    # optimisation
    eta: int = 20
    alpha: float = 0.1
    beta1: float = 0.005
    beta2: float = 0.005
    epochs: int = 500
    weight_decay: float = 1e-4
    # model sizes
    hidden_dim: int = 16
    d_a: int = 16
    D_max: int = 10
    dropout_rate: float = 0.5
    # protocol
    seed: int = 0
    setting: str = "single-graph-disjoint-label"
    class_ratios: tuple = (0.5, 0.2, 0.3)
    graph_ratios: tuple = (0.8, 0.1, 0.1)
    val_every: int = 50
    val_episodes: int = 20
    # switches
    first_order: bool = True
    normalize_eq6: bool = True
    classic_maml: bool = False
    use_influence_loss: bool = True
    use_mi_loss: bool = True

    def __post_init__(self):
        self.class_ratios = tuple(float(r) for r in self.class_ratios)
        self.graph_ratios = tuple(float(r) for r in self.graph_ratios)
        self.validate()

    def validate(self):
        if self.eta < 1:
            raise ConfigError(f"eta must be >= 1, got {self.eta}")
        if self.N < 2:
            raise ConfigError(f"N must be >= 2 for classification, got {self.N}")
        if self.K < 1 or self.Q < 1:
            raise ConfigError("K and Q must be positive")
        if self.h < 0 or self.C < 0 or self.m < 0:
            raise ConfigError("h, C and m must be non-negative")
        for name in ("alpha", "beta1", "beta2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if min(self.hidden_dim, self.d_a, self.D_max) < 1:
            raise ConfigError("hidden_dim, d_a and D_max must be positive")
        if self.setting not in SETTINGS:
            raise ConfigError(f"unknown setting {self.setting!r}; expected one of {SETTINGS}")
        for name in ("class_ratios", "graph_ratios"):
            r = getattr(self, name)
            if len(r) != 3 or min(r) < 0 or abs(sum(r) - 1.0) > 1e-9:
                raise ConfigError(f"{name} must be three non-negative numbers summing to 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["class_ratios"] = list(self.class_ratios)
        d["graph_ratios"] = list(self.graph_ratios)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)
