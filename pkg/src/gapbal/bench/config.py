"""Declarative experiment configuration, loadable from JSON."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..gradbal import AGGREGATORS
from ..lossbal import LOSS_STRATEGIES
from ..mtlmodel import SuiteSpec

RL_STRATEGY = "igbv2"


def valid_strategy_names() -> list[str]:
    return sorted(list(LOSS_STRATEGIES) + [RL_STRATEGY])


def valid_aggregator_names() -> list[str]:
    return sorted(AGGREGATORS)


@dataclass
class SacSettings:
    """Hyperparameters of the reinforcement-learning weighter."""

    gamma: float = 0.99
    tau: float = 0.005
    ent_alpha: float = 0.2
    auto_entropy: bool = False
    agent_lr: float = 3e-4
    update_batch: int = 256
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    update_e: int = 4
    use_e: int = 6
    update_every: int = 50
    buffer_capacity: int = 10_000
    use_min: bool = True
    use_alpha: bool = True

    def validate(self) -> None:
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not (0.0 < self.tau <= 1.0):
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if self.agent_lr <= 0.0 or self.ent_alpha <= 0.0:
            raise ConfigError("agent_lr and ent_alpha must be positive")
        if self.update_batch < 1 or self.buffer_capacity < self.update_batch:
            raise ConfigError(
                "need buffer_capacity >= update_batch >= 1, got "
                f"{self.buffer_capacity} < {self.update_batch}"
            )
        if self.update_e < 1 or self.use_e < 1 or self.update_every < 1:
            raise ConfigError("update_e, use_e and update_every must be >= 1")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden widths must be positive, got {self.hidden}")


@dataclass
class ExperimentConfig:
    """One experiment: suite, strategy, budget, schedules, and outputs."""

    suite: SuiteSpec = field(default_factory=SuiteSpec)
    strategy: str = "ew"
    use_si: bool | None = None
    aggregator: str | None = None
    epochs: int = 60
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    lr: float = 1e-3
    lr_decay_every: int = 100
    lr_decay_factor: float = 0.5
    adam_eps: float = 1e-8
    sac: SacSettings = field(default_factory=SacSettings)
    sweep_strategies: list[str] = field(
        default_factory=lambda: ["ew", "si", "igbv1", "igbv2"]
    )
    task_subset: list[int] | None = None
    out_dir: str | None = None
    record_batch_rows: bool = True

    def validate(self) -> None:
        self.suite.validate()
        self.sac.validate()
        names = valid_strategy_names()
        if self.strategy not in names:
            raise ConfigError(
                f"unknown loss strategy {self.strategy!r}; valid: {', '.join(names)}"
            )
        for s in self.sweep_strategies:
            if s not in names:
                raise ConfigError(
                    f"unknown loss strategy {s!r} in sweep; valid: {', '.join(names)}"
                )
        if self.aggregator is not None and self.aggregator not in AGGREGATORS:
            raise ConfigError(
                f"unknown aggregator {self.aggregator!r}; "
                f"valid: {', '.join(valid_aggregator_names())}"
            )
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0.0 or self.adam_eps <= 0.0:
            raise ConfigError("lr and adam_eps must be positive")
        if self.lr_decay_every < 1 or not (0.0 < self.lr_decay_factor <= 1.0):
            raise ConfigError("lr decay needs period >= 1 and factor in (0, 1]")
        if self.task_subset is not None:
            bad = [k for k in self.task_subset if not 0 <= k < self.suite.n_tasks]
            if not self.task_subset or bad:
                raise ConfigError(
                    f"task_subset must index tasks 0..{self.suite.n_tasks - 1}, "
                    f"got {self.task_subset}"
                )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a config from plain JSON data, rejecting unknown keys."""
    raw = dict(raw)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    known.add("batch_size")  # convenience alias for suite.batch_size
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}; valid: {sorted(known)}")

    suite_raw = raw.pop("suite", {})
    suite_known = {f.name for f in dataclasses.fields(SuiteSpec)}
    bad = sorted(set(suite_raw) - suite_known)
    if bad:
        raise ConfigError(f"unknown suite keys {bad}; valid: {sorted(suite_known)}")
    suite = SuiteSpec(**suite_raw)
    if "batch_size" in raw:
        suite.batch_size = int(raw.pop("batch_size"))

    sac_raw = raw.pop("sac", {})
    sac_known = {f.name for f in dataclasses.fields(SacSettings)}
    bad = sorted(set(sac_raw) - sac_known)
    if bad:
        raise ConfigError(f"unknown sac keys {bad}; valid: {sorted(sac_known)}")
    sac = SacSettings(**sac_raw)

    config = ExperimentConfig(suite=suite, sac=sac, **raw)
    config.validate()
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_dict(raw)
