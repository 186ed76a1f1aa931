"""Amortized habit policy: a network mapping latent states straight to
actions, trained by backpropagating expected free energy through imagined
rollouts of the frozen world model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PolicyConfig
from .errors import ContractError
from .gaussian import DiagonalGaussian, entropy, kl_divergence, reparam_sample
from .mountain_car import MountainCar, Step, Trajectory
from .networks import GaussianMLP
from .optim import Adam
from .preferences import PreferredPrior
from .world_model import ModelSet, encode_episode, posterior_infer


class HabitPolicy:
    """Gaussian head over a pre-squash action; tanh keeps actions in [-1, 1]."""

    def __init__(self, state_dim: int, hidden: tuple[int, ...] = (64, 64),
                 activation: str = "tanh", seed: int = 0):
        self.state_dim = state_dim
        self.net = GaussianMLP(state_dim, 1, hidden=hidden, activation=activation,
                               rng=np.random.default_rng(np.random.SeedSequence([seed, 7])))

    def parameters(self) -> list[Var]:
        return self.net.parameters()


def policy_action(policy: HabitPolicy, s: np.ndarray,
                  rng: np.random.Generator | None = None) -> float:
    """Action for a single latent state: tanh of the head mean, or of a
    reparameterized sample when an rng is given."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (policy.state_dim,):
        raise ContractError(f"state must have shape ({policy.state_dim},)")
    head = policy.net.forward(s)
    if rng is None:
        pre = head.mean_value
    else:
        pre = reparam_sample(head, rng.standard_normal(1))
    return float(np.tanh(pre[0]))


def _start_pool(models: ModelSet, dataset: list[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    """All posterior-mean latents in the dataset plus the prior index each one
    plans from (the index of the state reached one step later)."""
    latents, tau0s = [], []
    for ep in dataset:
        path = encode_episode(models, ep)
        latents.append(path)
        tau0s.append(np.arange(1, len(path) + 1))
    return np.concatenate(latents), np.concatenate(tau0s)


def policy_g_loss(models: ModelSet, policy: HabitPolicy, prior: PreferredPrior,
                  starts: np.ndarray, tau0s: np.ndarray,
                  action_noise: np.ndarray, state_noise: np.ndarray):
    """Mean expected free energy of imagined policy rollouts, differentiable
    in the policy parameters only (the world model runs frozen).

    starts is (n, state_dim); action_noise is (horizon, n, 1); state_noise is
    (horizon, n, state_dim). Returns (loss Var, tape).
    """
    n, d = starts.shape
    horizon = action_noise.shape[0]
    tau0s = np.asarray(tau0s, dtype=np.int64)
    tape = Tape()
    s = np.asarray(starts, dtype=np.float64)
    total = None
    for t in range(horizon):
        head = policy.net.forward(s, tape=tape)
        a = ad.tanh(reparam_sample(head, action_noise[t]))
        p_t = models.transition.forward(ad.concat([s, a], axis=-1), tape=tape, frozen=True)
        s = reparam_sample(p_t, state_noise[t])
        lik = models.likelihood.forward(s, tape=tape, frozen=True)
        idx = np.minimum(tau0s + t, prior.horizon - 1)
        active = prior.active[idx].astype(np.float64)
        step_g = entropy(lik)
        if active.any():
            prior_t = DiagonalGaussian(prior.means[idx], prior.variances[idx])
            step_g = step_g + active * kl_divergence(p_t, prior_t)
        term = ad.vsum(step_g)
        total = term if total is None else total + term
    return total / float(n), tape


def train_policy(models: ModelSet, prior: PreferredPrior, dataset: list[Trajectory],
                 config: PolicyConfig, seed: int = 0,
                 log_every: int = 0) -> tuple[HabitPolicy, list[float]]:
    """Backpropagate G through imagined rollouts into a fresh policy.

    Start latents come from posterior-encoded dataset states, carrying their
    own timestep so the prior stays aligned. Returns the policy and the
    per-iteration mean G curve.
    """
    if not dataset:
        raise ContractError("policy training requires a dataset of episodes")
    policy = HabitPolicy(models.state_dim, seed=seed)
    starts_all, tau0s_all = _start_pool(models, dataset)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    opt = Adam(policy.parameters(), lr=config.learning_rate)
    g_curve: list[float] = []
    n, d, horizon = config.batch_size, models.state_dim, config.horizon
    for it in range(config.iterations):
        pick = rng.integers(0, len(starts_all), size=n)
        loss, tape = policy_g_loss(
            models, policy, prior, starts_all[pick], tau0s_all[pick],
            rng.standard_normal((horizon, n, 1)),
            rng.standard_normal((horizon, n, d)))
        opt.zero_grad()
        tape.backward(loss)
        opt.step()
        g_curve.append(float(loss.value))
        if log_every and (it % log_every == 0 or it == config.iterations - 1):
            print(f"iter {it:5d}  G={g_curve[-1]:9.4f}")
    return policy, g_curve


@dataclass
class PolicyEvalResult:
    starts: list[float]
    seeds: list[int]
    successes: list[bool]
    steps: list[int]

    @property
    def success_rate(self) -> float:
        return sum(self.successes) / len(self.successes)

    @property
    def mean_steps_to_goal(self) -> float:
        won = [s for s, ok in zip(self.steps, self.successes) if ok]
        return float(np.mean(won)) if won else float("nan")

    def to_csv(self) -> str:
        lines = ["start,seed,success,steps"]
        for start, seed, ok, k in zip(self.starts, self.seeds, self.successes, self.steps):
            lines.append(f"{float(start)!r},{seed},{int(ok)},{k}")
        return "\n".join(lines) + "\n"


def run_policy_episode(policy: HabitPolicy, models: ModelSet, env: MountainCar,
                       seed: int, start_position: float | None = None,
                       max_steps: int = 200) -> Trajectory:
    """Closed-loop episode: posterior mean in, deterministic action out.

    The first belief update uses a null action, matching the training
    convention for a chain's first step.
    """
    rng = np.random.default_rng(seed)
    state, _ = env.reset(rng, start_position)
    traj = Trajectory(start_position=state.position, seed=seed)
    belief = np.zeros(models.state_dim)
    for t in range(max_steps):
        action = policy_action(policy, belief)
        state, obs, reward, done = env.step(state, action, rng)
        traj.steps.append(Step(action, obs, reward, done))
        belief = posterior_infer(models, belief,
                                 0.0 if t == 0 else action, obs).mean_value
        if done:
            break
    return traj


def evaluate_policy(policy: HabitPolicy, models: ModelSet, env: MountainCar,
                    starts, seeds, max_steps: int = 200
                    ) -> tuple[PolicyEvalResult, list[Trajectory]]:
    starts = [float(s) for s in starts]
    seeds = [int(s) for s in seeds]
    if len(starts) != len(seeds):
        raise ContractError("need one seed per start")
    result = PolicyEvalResult([], [], [], [])
    episodes = []
    for start, seed in zip(starts, seeds):
        traj = run_policy_episode(policy, models, env, seed, start, max_steps)
        episodes.append(traj)
        result.starts.append(start)
        result.seeds.append(seed)
        result.successes.append(traj.reached_goal)
        result.steps.append(len(traj))
    return result, episodes


def save_policy(path, policy: HabitPolicy, meta: dict | None = None):
    header = {"kind": "habit_policy", "state_dim": policy.state_dim,
              "net": policy.net.spec_meta()}
    if meta:
        header["extra"] = meta
    save_checkpoint(path, header, policy.net.named_arrays("policy/"))


def load_policy(path) -> tuple[HabitPolicy, dict]:
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "habit_policy":
        raise ContractError(f"checkpoint at {path} does not hold a habit policy")
    policy = HabitPolicy(meta["state_dim"], hidden=tuple(meta["net"]["hidden"]),
                         activation=meta["net"]["activation"])
    policy.net = GaussianMLP.from_meta(meta["net"], arrays, "policy/")
    return policy, meta.get("extra", {})
