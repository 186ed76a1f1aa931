"""Continuous mountain car with noisy position-only observations.

Dynamics are the standard continuous formulation: engine power 0.0015,
gravity 0.0025*cos(3x), velocity clamped to [-0.07, 0.07], position to
[-1.2, 0.6], goal at 0.45 with a single sparse +1 reward. The agent only
ever sees the position corrupted by Gaussian noise. All stochasticity
(start sampling, observation noise, the bootstrap random agent) flows
through seeded numpy generators; the dynamics themselves are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .errors import ContractError, FormatError

MIN_POSITION = -1.2
MAX_POSITION = 0.6
MAX_SPEED = 0.07
GOAL_POSITION = 0.45
POWER = 0.0015
GRAVITY = 0.0025
START_LOW = -0.6
START_HIGH = -0.4

TRAJ_MAGIC = "AIFTRAJ v1"


class CarState(NamedTuple):
    position: float
    velocity: float


class Step(NamedTuple):
    action: float
    observation: float
    reward: float
    done: bool


@dataclass
class Trajectory:
    """One episode of (action, observation, reward, done) steps."""

    steps: list[Step] = field(default_factory=list)
    start_position: float | None = None
    seed: int = 0

    def __len__(self):
        return len(self.steps)

    def actions(self) -> np.ndarray:
        return np.array([s.action for s in self.steps], dtype=np.float64)

    def observations(self) -> np.ndarray:
        return np.array([s.observation for s in self.steps], dtype=np.float64)

    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps], dtype=np.float64)

    @property
    def reached_goal(self) -> bool:
        return any(s.reward > 0 for s in self.steps)


class MountainCar:
    """Stateless environment: state is passed in and out of every call."""

    def __init__(self, noise_std: float = 0.05):
        self.noise_std = float(noise_std)

    def _observe(self, position: float, rng: np.random.Generator | None) -> float:
        if self.noise_std == 0.0 or rng is None:
            return position
        return position + self.noise_std * rng.standard_normal()

    def reset(self, rng: np.random.Generator, start_position: float | None = None
              ) -> tuple[CarState, float]:
        """Place the car at rest; sample the start uniformly if not given."""
        if start_position is None:
            start_position = rng.uniform(START_LOW, START_HIGH)
        else:
            if not (MIN_POSITION <= start_position <= MAX_POSITION):
                raise ContractError(f"start position {start_position} outside "
                                    f"[{MIN_POSITION}, {MAX_POSITION}]")
        state = CarState(float(start_position), 0.0)
        return state, self._observe(state.position, rng)

    def step(self, state: CarState, action: float, rng: np.random.Generator | None = None
             ) -> tuple[CarState, float, float, bool]:
        """Advance one step. Returns (state', observation, reward, done)."""
        if not np.isfinite(action):
            raise ContractError("action must be finite")
        action = float(np.clip(action, -1.0, 1.0))
        velocity = state.velocity + POWER * action - GRAVITY * np.cos(3.0 * state.position)
        velocity = float(np.clip(velocity, -MAX_SPEED, MAX_SPEED))
        position = float(np.clip(state.position + velocity, MIN_POSITION, MAX_POSITION))
        if position <= MIN_POSITION and velocity < 0.0:
            velocity = 0.0
        done = position >= GOAL_POSITION
        reward = 1.0 if done else 0.0
        new_state = CarState(position, velocity)
        return new_state, self._observe(position, rng), reward, done


def random_agent_action(previous: float | None, rng: np.random.Generator) -> float:
    """Uniform action in [-1, 1] with a 90% chance of repeating the last one."""
    if previous is not None and rng.random() < 0.9:
        return previous
    return float(rng.uniform(-1.0, 1.0))


def scripted_expert_action(state: CarState) -> float:
    """Full-power push along the direction of motion (energy pumping)."""
    if abs(state.velocity) > 1e-4:
        return float(np.sign(state.velocity))
    return 1.0


ActionSource = Callable[[CarState, float | None, np.random.Generator], float]


def random_agent_source(state: CarState, previous: float | None,
                        rng: np.random.Generator) -> float:
    return random_agent_action(previous, rng)


def expert_source(state: CarState, previous: float | None,
                  rng: np.random.Generator) -> float:
    return scripted_expert_action(state)


def run_episode(env: MountainCar, source: ActionSource, max_steps: int, seed: int,
                start_position: float | None = None) -> Trajectory:
    """Roll reset + steps until done or max_steps, recording every transition."""
    if max_steps < 1:
        raise ContractError("max_steps must be at least 1")
    rng = np.random.default_rng(seed)
    state, _ = env.reset(rng, start_position)
    traj = Trajectory(start_position=state.position, seed=seed)
    previous = None
    for _ in range(max_steps):
        action = source(state, previous, rng)
        state, obs, reward, done = env.step(state, action, rng)
        traj.steps.append(Step(float(np.clip(action, -1.0, 1.0)), obs, reward, done))
        previous = action
        if done:
            break
    return traj


# -- trajectory files ---------------------------------------------------------


def save_trajectories(path, trajectories: list[Trajectory]):
    """Write AIFTRAJ v1: per-step CSV records, episodes separated by blanks."""
    lines = [TRAJ_MAGIC]
    for episode_id, traj in enumerate(trajectories):
        for t, step in enumerate(traj.steps, start=1):
            lines.append(f"{episode_id},{t},{step.action!r},{step.observation!r},"
                         f"{step.reward!r},{int(step.done)}")
        lines.append("")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trajectories(path) -> list[Trajectory]:
    path = Path(path)
    text = path.read_text(encoding="utf-8").splitlines()
    if not text or text[0] != TRAJ_MAGIC:
        raise FormatError(f"{path}: expected '{TRAJ_MAGIC}' header")
    episodes: dict[int, Trajectory] = {}
    for line in text[1:]:
        if not line.strip():
            continue
        episode_id, t, action, obs, reward, done = line.split(",")
        traj = episodes.setdefault(int(episode_id), Trajectory())
        traj.steps.append(Step(float(action), float(obs), float(reward), bool(int(done))))
    return [episodes[k] for k in sorted(episodes)]
