"""Run configuration: everything a reproducible pipeline run needs besides the seed."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass
class EnvConfig:
    noise_std: float = 0.05
    max_steps: int = 200


@dataclass
class ModelConfig:
    state_dim: int = 8
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"


@dataclass
class TrainConfig:
    window: int = 16
    batch_size: int = 32
    epochs: int = 600
    learning_rate: float = 1e-3
    kl_weight: float = 1.0


@dataclass
class PriorConfig:
    horizon: int = 200
    reward_threshold: int = 100


@dataclass
class PlannerConfig:
    num_candidates: int = 500
    horizon: int = 50
    gamma: float = 10.0
    cem_iterations: int = 0
    cem_elite_fraction: float = 0.1
    ambiguity_samples: int = 3
    seed: int = 0
    stochastic_selection: bool = False
    replan_every_step: bool = True

    def __post_init__(self):
        if self.num_candidates < 1:
            raise ValueError("num_candidates must be at least 1")
        if not (0.0 < self.cem_elite_fraction < 1.0):
            raise ValueError("cem_elite_fraction must lie in (0, 1)")


@dataclass
class PolicyConfig:
    horizon: int = 30
    iterations: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-3
    ambiguity_samples: int = 1


@dataclass
class EvalConfig:
    num_starts: int = 10
    start_low: float = -1.1
    start_high: float = 0.3
    planner_episodes: int = 10
    diag_candidates: int = 5000
    diag_horizon: int = 200
    diag_start: float = -0.5


@dataclass
class RunConfig:
    """Top-level knob set; a run is reproducible from this plus its seed."""

    seed: int = 0
    episodes: int = 100
    expert_episodes: int = 5
    env: EnvConfig = field(default_factory=EnvConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        kwargs = dict(data)
        for name, section in _SECTIONS.items():
            if name in kwargs and isinstance(kwargs[name], dict):
                kwargs[name] = section(**kwargs[name])
        cfg = cls(**kwargs)
        cfg.model.hidden = tuple(cfg.model.hidden)
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


_SECTIONS = {
    "env": EnvConfig,
    "model": ModelConfig,
    "training": TrainConfig,
    "prior": PriorConfig,
    "planner": PlannerConfig,
    "policy": PolicyConfig,
    "eval": EvalConfig,
}
