"""Expected-free-energy planning: score imagined rollouts against the
preferred-state prior, form a belief over candidates, act.

Per imagined step the score is a risk term, the KL from the predicted state
Gaussian to the prior Gaussian at the matching timestep (zero when that
timestep is inactive), plus an ambiguity term, the expected entropy of the
decoded observation under sampled states. Candidate sequences come from the
same 90%-repeat scheme as the random agent, optionally sharpened by
cross-entropy-method refits toward the lowest-scoring elites.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import PlannerConfig
from .errors import ContractError
from .gaussian import (DiagonalGaussian, PolicyBelief, VARIANCE_FLOOR, entropy,
                       kl_divergence, policy_softmax)
from .mountain_car import GOAL_POSITION, MountainCar, Step, Trajectory
from .preferences import PreferredPrior
from .world_model import ImaginedRollout, ModelSet, imagine_batch, posterior_infer

# Width of the resampling distribution never collapses entirely, so later CEM
# rounds can still explore.
_CEM_STD_FLOOR = 1e-3


def sample_action_sequences(config: PlannerConfig, rng: np.random.Generator) -> np.ndarray:
    """Candidate action sequences, shape (num_candidates, horizon), each drawn
    with the random agent's 90%-repeat scheme."""
    return _repeat_scheme(config.num_candidates, config.horizon, rng)


def _repeat_scheme(num: int, horizon: int, rng: np.random.Generator) -> np.ndarray:
    if num < 1 or horizon < 1:
        raise ContractError("need at least one candidate and one step")
    actions = np.empty((num, horizon))
    current = rng.uniform(-1.0, 1.0, size=num)
    actions[:, 0] = current
    for t in range(1, horizon):
        redraw = rng.random(num) >= 0.9
        fresh = rng.uniform(-1.0, 1.0, size=num)
        current = np.where(redraw, fresh, current)
        actions[:, t] = current
    return actions


def _efe_terms(models: ModelSet, prior: PreferredPrior, tau0: int,
               means: np.ndarray, variances: np.ndarray, samples: np.ndarray,
               ambiguity_samples: int, rng: np.random.Generator | None,
               ambiguity_noise: np.ndarray | None = None) -> np.ndarray:
    """Per-step expected free energy for a batch of rollouts.

    means/variances/samples are (horizon, n, state_dim); the result is
    (horizon, n). Imagined step t is scored against prior index tau0 + t,
    clamped to the final entry for steps past the prior's end. Extra
    ambiguity draws beyond the chain sample come from ambiguity_noise
    (ambiguity_samples - 1, horizon, state_dim) when given, else from rng.
    """
    if not (0 <= tau0 < prior.horizon):
        raise ContractError(f"tau0 {tau0} outside the prior's range [0, {prior.horizon})")
    if ambiguity_samples < 1:
        raise ContractError("ambiguity_samples must be at least 1")
    if ambiguity_samples > 1 and rng is None and ambiguity_noise is None:
        raise ContractError("extra ambiguity samples need an rng or noise array")
    horizon, n, d = means.shape
    per_step = np.empty((horizon, n))
    for t in range(horizon):
        k = prior.clamp_index(tau0 + t)
        if prior.active[k]:
            q_t = DiagonalGaussian(means[t], variances[t])
            p_t = DiagonalGaussian(prior.means[k], prior.variances[k])
            risk = kl_divergence(q_t, p_t)
        else:
            risk = 0.0
        ambiguity = entropy(models.likelihood.forward(samples[t]))
        for j in range(ambiguity_samples - 1):
            if ambiguity_noise is None:
                eps = rng.standard_normal((n, d))
            else:
                eps = ambiguity_noise[j, t]
            draw = means[t] + np.sqrt(variances[t]) * eps
            ambiguity = ambiguity + entropy(models.likelihood.forward(draw))
        per_step[t] = risk + ambiguity / ambiguity_samples
    return per_step


def expected_free_energy(rollout: ImaginedRollout, prior: PreferredPrior,
                         models: ModelSet, tau0: int, ambiguity_samples: int = 1,
                         rng: np.random.Generator | None = None) -> tuple[float, np.ndarray]:
    """Score a single imagined rollout. Returns (g_value, per_step_g)."""
    per_step = _efe_terms(models, prior, tau0,
                          rollout.state_means[:, None, :],
                          rollout.state_variances[:, None, :],
                          rollout.sampled_states[:, None, :],
                          ambiguity_samples, rng)[:, 0]
    return float(per_step.sum()), per_step


def policy_belief(g_values, gamma: float) -> PolicyBelief:
    """Belief over candidate policies: softmax(-gamma * G)."""
    return policy_softmax(g_values, gamma)


@dataclass
class PlanDiagnostics:
    """Everything plan() measured about its final candidate population."""

    tau0: int
    g_values: np.ndarray          # (n,)
    final_positions: np.ndarray   # (n,) decoded mean position at the last step
    reached_goal: np.ndarray      # (n,) bool, final position >= goal
    chosen_index: int
    chosen_sequence: np.ndarray   # (horizon,)
    g_min_per_iteration: list[float] = field(default_factory=list)


def diagnostics_csv(diag: PlanDiagnostics) -> str:
    lines = ["candidate_id,g_value,final_position,reached_goal"]
    for i, (g, pos, hit) in enumerate(zip(diag.g_values, diag.final_positions,
                                          diag.reached_goal)):
        lines.append(f"{i},{float(g)!r},{float(pos)!r},{int(hit)}")
    return "\n".join(lines) + "\n"


def plan(models: ModelSet, belief_state: DiagonalGaussian, prior: PreferredPrior,
         tau0: int, config: PlannerConfig, rng: np.random.Generator
         ) -> tuple[float, PlanDiagnostics]:
    """Pick the next action by random-shooting (optionally CEM-refined) search.

    Each candidate gets its own belief sample, chain noise, and ambiguity
    draws, so the population behaves like independent imagined episodes; the
    draws are made once up front and reused across CEM rounds, keeping the
    whole search a deterministic function of the rng.
    """
    n, horizon, d = config.num_candidates, config.horizon, models.state_dim
    mean = np.atleast_1d(belief_state.mean_value)
    std = np.sqrt(np.atleast_1d(belief_state.variance_value))
    s0 = mean + std * rng.standard_normal((n, d))
    step_noise = rng.standard_normal((n, horizon, d))
    amb_noise = rng.standard_normal((config.ambiguity_samples - 1, horizon, n, d))

    def evaluate(actions: np.ndarray):
        means, variances, samples = imagine_batch(models, s0, actions, step_noise)
        per_step = _efe_terms(models, prior, tau0, means, variances, samples,
                              config.ambiguity_samples, rng,
                              ambiguity_noise=amb_noise)
        finals = models.likelihood.forward(means[-1]).mean_value[:, 0]
        return per_step.sum(axis=0), finals

    actions = sample_action_sequences(config, rng)
    g_values, finals = evaluate(actions)
    g_min_history = [float(g_values.min())]
    for _ in range(config.cem_iterations):
        elite_count = max(1, int(np.ceil(config.cem_elite_fraction * n)))
        elites = actions[np.argsort(g_values)[:elite_count]]
        mu = elites.mean(axis=0)
        sd = np.maximum(elites.std(axis=0), _CEM_STD_FLOOR)
        b = int(np.argmin(g_values))
        best = actions[b]
        # The incumbent moves to row 0 together with its chain randomness, so
        # its re-evaluation is exact and the round minimum can never regress.
        for arr, axis in ((s0, 0), (step_noise, 0), (amb_noise, 2)):
            idx = [slice(None)] * arr.ndim
            idx[axis] = [0, b]
            swap = [slice(None)] * arr.ndim
            swap[axis] = [b, 0]
            arr[tuple(idx)] = arr[tuple(swap)]
        actions = np.clip(mu + sd * rng.standard_normal((n, horizon)), -1.0, 1.0)
        actions[0] = best
        g_values, finals = evaluate(actions)
        g_min_history.append(float(g_values.min()))

    if config.stochastic_selection:
        belief = policy_belief(g_values, config.gamma)
        chosen = int(rng.choice(n, p=belief.probabilities))
    else:
        chosen = int(np.argmin(g_values))
    diag = PlanDiagnostics(tau0=tau0, g_values=g_values, final_positions=finals,
                           reached_goal=finals >= GOAL_POSITION, chosen_index=chosen,
                           chosen_sequence=actions[chosen].copy(),
                           g_min_per_iteration=g_min_history)
    return float(actions[chosen, 0]), diag


def act_in_env(models: ModelSet, prior: PreferredPrior, config: PlannerConfig,
               seed: int, start_position: float | None = None,
               env: MountainCar | None = None, max_steps: int = 200) -> Trajectory:
    """Closed-loop planning episode: re-plan, act, update the belief.

    The belief starts at the zero latent and the first posterior update uses
    a null action (the training convention for a chain's first step); after
    that each update conditions on the executed action. With replanning
    disabled the chosen sequence is executed to its end before planning again.
    """
    if env is None:
        env = MountainCar()
    env_ss, plan_ss = np.random.SeedSequence(seed).spawn(2)
    env_rng = np.random.default_rng(env_ss)
    plan_rng = np.random.default_rng(plan_ss)
    state, _ = env.reset(env_rng, start_position)
    traj = Trajectory(start_position=state.position, seed=seed)
    belief = DiagonalGaussian(np.zeros(models.state_dim),
                              np.full(models.state_dim, VARIANCE_FLOOR))
    pending: list[float] = []
    for t in range(max_steps):
        if config.replan_every_step or not pending:
            action, diag = plan(models, belief, prior, min(t, prior.horizon - 1),
                                config, plan_rng)
            pending = [action] if config.replan_every_step else list(diag.chosen_sequence)
        action = pending.pop(0)
        state, obs, reward, done = env.step(state, action, env_rng)
        traj.steps.append(Step(float(np.clip(action, -1.0, 1.0)), obs, reward, done))
        belief = posterior_infer(models, belief.mean_value,
                                 0.0 if t == 0 else action, obs)
        if done:
            break
    return traj
