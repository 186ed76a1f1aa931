"""Plan with expected free energy against a demo-derived preferred prior.

The script records scripted-expert demonstrations, encodes them into a
per-timestep latent prior, scores a population of candidate action
sequences, and shows that candidates whose imagined ending reaches the goal
carry lower expected free energy. It finishes with a closed-loop planning
episode from the valley.
"""

import numpy as np

from aif.config import ModelConfig, PlannerConfig, TrainConfig
from aif.gaussian import DiagonalGaussian, VARIANCE_FLOOR
from aif.mountain_car import (MountainCar, expert_source, random_agent_source,
                              run_episode)
from aif.planning import act_in_env, plan
from aif.preferences import prior_from_demos
from aif.world_model import train_models


def main():
    env = MountainCar()
    print("training a small world model on 40 random episodes...")
    episodes = [run_episode(env, random_agent_source, 200, seed=i)
                for i in range(40)]
    models, _ = train_models(episodes, ModelConfig(state_dim=6, hidden=(48, 48)),
                             TrainConfig(epochs=40), seed=0)

    print("recording 5 expert demos and building the preferred prior...")
    demos = [run_episode(env, expert_source, 200, seed=100 + i,
                         start_position=float(s))
             for i, s in enumerate(np.linspace(-0.6, -0.4, 5))]
    print(f"  expert steps to goal: {[len(d) for d in demos]}")
    prior = prior_from_demos(models, demos, horizon=200)
    decoded = models.likelihood.forward(prior.means[-1])
    print(f"  decoded final preferred position: {float(decoded.mean_value[0]):+.3f} "
          f"(goal is +0.450)")

    config = PlannerConfig(num_candidates=500, horizon=150, ambiguity_samples=1)
    belief = DiagonalGaussian(np.zeros(models.state_dim),
                              np.full(models.state_dim, VARIANCE_FLOOR))
    _, diag = plan(models, belief, prior, 0, config, np.random.default_rng(7))
    hit = diag.reached_goal
    print(f"\nscored {len(diag.g_values)} candidate sequences over 150 steps:")
    print(f"  {int(hit.sum())} imagined endings reach the goal")
    if hit.any() and (~hit).any():
        print(f"  mean G | reached: {diag.g_values[hit].mean():.1f}")
        print(f"  mean G | missed:  {diag.g_values[~hit].mean():.1f}")
    print(f"  chosen first action: {diag.chosen_sequence[0]:+.3f}")

    print("\nclosed-loop planning episode from the valley (-0.5):")
    live = PlannerConfig(num_candidates=300, horizon=50, ambiguity_samples=1)
    traj = act_in_env(models, prior, live, seed=3, start_position=-0.5)
    outcome = "reached the goal" if traj.reached_goal else "did not reach the goal"
    print(f"  {outcome} in {len(traj)} steps")


if __name__ == "__main__":
    main()
