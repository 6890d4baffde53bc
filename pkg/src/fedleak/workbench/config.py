"""Scenario configuration files (YAML) with strict key checking.

Every key is listed in the dataclasses below; anything else is rejected.

Example::

    kind: vfl-linreg
    seed: 3
    dataset: {source: synthetic, rows: 8, features: 8}
    split: {attacker_features: 4, victim_features: 4, fake_features: 4}
    training: {eta: auto, iterations: 40}
    attack: {placement: triangular, tolerance: 1.0e-6}
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..errors import ConfigError
from .placement import POLICIES

KINDS = ("vfl-linreg", "vfl-logreg", "hfl-linreg", "vfl-multi", "secureboost")


@dataclass
class DatasetSpec:
    source: str = "synthetic"          # csv path, builtin:<name>, or synthetic
    format: str = "csv"
    label_column: Optional[str] = None
    standardize: bool = True
    binarize: bool = False             # labels -> 1[y > median], for logistic runs
    rows: int = 8                      # synthetic only
    features: Optional[int] = None     # synthetic only; defaults to the split total
    noise: float = 0.1                 # synthetic only
    samples: Optional[int] = None      # leading rows used for training and recovery


@dataclass
class SplitSpec:
    attacker_features: Optional[int] = None
    victim_features: Optional[int] = None
    fake_features: int = 0
    bystander_features: list = field(default_factory=list)   # vfl-multi honest parties
    party_samples: list = field(default_factory=list)        # hfl: [victim, attacker]


@dataclass
class TrainingSpec:
    eta: Any = "auto"
    alpha: float = 0.0
    iterations: Optional[int] = None   # default 3 * batch rows (regression)
    trees: int = 5
    depth: int = 3
    learning_rate: float = 0.3
    lam: float = 1.0
    buckets: int = 32


@dataclass
class AttackSpec:
    placement: str = "triangular"
    tolerance: float = 1e-6
    holdout: int = 0
    epsilon: float = 1e-2
    grid_points: int = 401
    bounds: list = field(default_factory=lambda: [0.0, 10.0])


@dataclass
class SweepSpec:
    far: list = field(default_factory=list)
    epsilon: list = field(default_factory=list)
    grid_points: list = field(default_factory=list)   # defaults to attack.grid_points


@dataclass
class OutputSpec:
    report: Optional[str] = None
    plots: Optional[str] = None        # directory for plot-ready CSV files


@dataclass
class ScenarioConfig:
    kind: str
    seed: int
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    split: SplitSpec = field(default_factory=SplitSpec)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    sweeps: SweepSpec = field(default_factory=SweepSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    @classmethod
    def from_mapping(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        cfg = _build(cls, data, "")
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        return cls.from_mapping(data or {})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def check(self) -> None:
        """Checks that need no data; split sums are checked against the dataset later."""
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; choose from {KINDS}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        a = self.attack
        if a.placement not in POLICIES:
            raise ConfigError(f"unknown placement {a.placement!r}")
        if not a.tolerance > 0 or not a.epsilon > 0:
            raise ConfigError("tolerance and epsilon must be positive")
        if len(a.bounds) != 2 or not a.bounds[1] > a.bounds[0]:
            raise ConfigError("bounds must be [lower, upper] with upper > lower")
        if a.holdout < 0:
            raise ConfigError("holdout must be non-negative")
        t = self.training
        if t.eta != "auto" and not (isinstance(t.eta, (int, float)) and t.eta > 0):
            raise ConfigError("eta must be a positive number or 'auto'")
        if t.iterations is not None and t.iterations < 2:
            raise ConfigError("iterations must be at least 2")
        s = self.split
        if s.fake_features < 0:
            raise ConfigError("fake_features must be non-negative")
        if self.kind == "hfl-linreg":
            if len(s.party_samples) != 2:
                raise ConfigError("hfl-linreg needs party_samples: [victim, attacker]")
        else:
            if s.attacker_features is None or s.victim_features is None:
                raise ConfigError(f"{self.kind} needs attacker_features and victim_features")
        for sweep in self.sweeps.far:
            if not 0 <= sweep < 1:
                raise ConfigError("FAR values must lie in [0, 1)")

    def feature_total(self) -> Optional[int]:
        s = self.split
        if s.attacker_features is None or s.victim_features is None:
            return None
        return s.attacker_features + s.victim_features + sum(s.bystander_features)

    def check_split(self, rows: int, features: int) -> None:
        """Reject a split that does not match the dataset dimensions."""
        s = self.split
        if self.kind == "hfl-linreg":
            if any(c < 1 for c in s.party_samples):
                raise ConfigError("every party needs at least one sample")
            if sum(s.party_samples) != rows:
                raise ConfigError(
                    f"party_samples {s.party_samples} sum to {sum(s.party_samples)}, "
                    f"dataset has {rows} rows"
                )
            return
        total = self.feature_total()
        if min(s.attacker_features, s.victim_features, *s.bystander_features, 1) < 1:
            raise ConfigError("every party needs at least one feature")
        if total != features:
            raise ConfigError(f"split assigns {total} features, dataset has {features}")
        if self.dataset.samples is not None and not 1 <= self.dataset.samples <= rows:
            raise ConfigError(f"samples must lie in [1, {rows}]")


def _build(cls, data: dict, where: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where or 'config root'}")
    kwargs = {}
    for name, value in data.items():
        f = names[name]
        sub = _SECTIONS.get(name) if cls is ScenarioConfig else None
        if sub is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            kwargs[name] = _build(sub, value, name)
        else:
            kwargs[name] = value
    missing = [f.name for f in dataclasses.fields(cls)
               if f.name not in kwargs and f.default is dataclasses.MISSING
               and f.default_factory is dataclasses.MISSING]
    if missing:
        raise ConfigError(f"missing required key(s) {missing} in {where or 'config root'}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


_SECTIONS = {
    "dataset": DatasetSpec,
    "split": SplitSpec,
    "training": TrainingSpec,
    "attack": AttackSpec,
    "sweeps": SweepSpec,
    "output": OutputSpec,
}
