"""Experiment configuration, loadable from a TOML file."""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import Kind, Strategy
from .contract import Stage


class ConfigError(ValueError):
    pass


@dataclass
class DataSource:
    source: str = "synthetic"
    rows: int = 6000
    path: str = ""
    max_rows: int = 10_000
    schema: dict[str, str] = field(default_factory=dict)
    positive_label: str | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "adult", "csv"):
            raise ConfigError(f"unknown dataset source {self.source!r}")
        if self.source != "synthetic" and not self.path:
            raise ConfigError(f"dataset source {self.source!r} needs a path")
        if self.source == "csv" and not self.schema:
            raise ConfigError("csv dataset needs a [dataset.schema] table")


@dataclass
class StrategySpec:
    kind: str
    count: int = 0
    agents: list[int] = field(default_factory=list)
    stage: str | None = None

    def __post_init__(self):
        Kind(self.kind)
        if self.stage is not None:
            Stage(self.stage)
        if not self.agents and self.count < 1:
            raise ConfigError("strategy entry needs `count` or `agents`")


@dataclass
class Topology:
    block_prob: float = 0.0
    protect_honest: bool = True
    blocked: list[list[int]] = field(default_factory=list)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    n_agents: int = 5
    rounds: int = 1
    epsilon: float = 0.1
    alpha: float = 1.0
    eta: float = 0.25
    epochs: int = 100
    bond: int = 1_000_000
    refund_fraction: str | None = None
    stage_durations: list[int] = field(default_factory=lambda: [10, 10, 10, 10])
    relative_sizes: list[float] | None = None
    dataset: DataSource = field(default_factory=DataSource)
    strategies: list[StrategySpec] = field(default_factory=list)
    reachability: Topology = field(default_factory=Topology)

    def __post_init__(self):
        if isinstance(self.dataset, dict):
            self.dataset = DataSource(**self.dataset)
        if isinstance(self.reachability, dict):
            self.reachability = Topology(**self.reachability)
        self.strategies = [s if isinstance(s, StrategySpec) else StrategySpec(**s) for s in self.strategies]
        if self.n_agents < 1 or self.rounds < 1:
            raise ConfigError("n_agents and rounds must be >= 1")
        if self.epsilon <= 0 or self.alpha <= 0 or self.eta <= 0:
            raise ConfigError("epsilon, alpha and eta must be positive")
        if self.relative_sizes is not None and len(self.relative_sizes) != self.n_agents:
            raise ConfigError("relative_sizes needs one entry per agent")
        self.assign_strategies()

    @property
    def accounts(self) -> list[str]:
        return [f"agent-{i:03d}" for i in range(self.n_agents)]

    def refund(self) -> Fraction | None:
        return None if self.refund_fraction is None else Fraction(self.refund_fraction)

    def assign_strategies(self) -> list[Strategy]:
        """Adversaries fill explicit indices first, then take agents from the end of the list."""
        accounts = self.accounts
        kinds: list[Strategy | None] = [None] * self.n_agents
        free = list(range(self.n_agents - 1, -1, -1))
        for spec in self.strategies:
            idx = list(spec.agents)
            for i in idx:
                if not 0 <= i < self.n_agents or kinds[i] is not None:
                    raise ConfigError(f"agent index {i} invalid or already assigned")
                free.remove(i)
            if not idx:
                if spec.count > len(free):
                    raise ConfigError("more adversaries than agents")
                idx, free = free[: spec.count], free[spec.count:]
            group = frozenset(accounts[i] for i in idx)
            for i in idx:
                kinds[i] = Strategy(Kind(spec.kind),
                                    colluding=group if Kind(spec.kind) == Kind.SCORE_FABRICATOR else frozenset(),
                                    stage=Stage(spec.stage) if spec.stage else None)
        return [k or Strategy() for k in kinds]

    @property
    def n_malicious(self) -> int:
        return sum(not s.honest for s in self.assign_strategies())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)


def load_config(path) -> ExperimentConfig:
    with open(Path(path), "rb") as fh:
        return ExperimentConfig.from_dict(tomllib.load(fh))
