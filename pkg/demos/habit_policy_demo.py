"""Distill planning into a habit: train an amortized policy by
backpropagating expected free energy through imagined rollouts of a frozen
world model, then drive the real environment with it.

No environment steps are used for policy training; only the world model's
imagination. The world model's parameters stay frozen throughout.
"""

import numpy as np

from aif.config import ModelConfig, PolicyConfig, TrainConfig
from aif.habit import evaluate_policy, train_policy
from aif.mountain_car import (MountainCar, expert_source, random_agent_source,
                              run_episode)
from aif.preferences import prior_from_demos
from aif.world_model import train_models


def main():
    env = MountainCar()
    print("training a small world model on 40 random episodes...")
    episodes = [run_episode(env, random_agent_source, 200, seed=i)
                for i in range(40)]
    models, _ = train_models(episodes, ModelConfig(state_dim=6, hidden=(48, 48)),
                             TrainConfig(epochs=40), seed=0)

    demos = [run_episode(env, expert_source, 200, seed=100 + i,
                         start_position=float(s))
             for i, s in enumerate(np.linspace(-0.6, -0.4, 5))]
    prior = prior_from_demos(models, demos, horizon=200)

    frozen = [p.value.copy() for p in models.parameters()]
    print("training the habit policy through 600 imagined rollouts...")
    config = PolicyConfig(horizon=30, iterations=600, batch_size=16)
    policy, curve = train_policy(models, prior, episodes, config, seed=0,
                                 log_every=150)
    print(f"mean imagined G: {np.mean(curve[:30]):.1f} -> {np.mean(curve[-30:]):.1f}")
    unchanged = all(np.array_equal(p.value, old)
                    for p, old in zip(models.parameters(), frozen))
    print(f"world-model parameters untouched: {unchanged}")

    starts = np.linspace(-0.9, 0.1, 6)
    result, _ = evaluate_policy(policy, models, env, starts,
                                seeds=range(len(starts)))
    print("\nclosed-loop evaluation (deterministic actions):")
    for start, ok, steps in zip(result.starts, result.successes, result.steps):
        outcome = f"goal in {steps} steps" if ok else "no goal in 200 steps"
        print(f"  start {start:+.2f}: {outcome}")
    print(f"success rate: {result.success_rate:.0%}")


if __name__ == "__main__":
    main()
