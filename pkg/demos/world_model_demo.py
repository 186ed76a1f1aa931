"""Train a small latent world model on random mountain-car episodes and watch
it learn: variational free energy falls, and open-loop forecasts of the
noisy position track the real trajectory.

Runs in under a minute at this reduced scale.
"""

import numpy as np

from aif.config import ModelConfig, TrainConfig
from aif.mountain_car import MountainCar, random_agent_source, run_episode
from aif.world_model import (ModelSet, open_loop_predictions, open_loop_rms,
                             train_models)


def main():
    env = MountainCar()
    print("collecting 30 random episodes...")
    episodes = [run_episode(env, random_agent_source, 200, seed=i)
                for i in range(30)]
    print(f"  {sum(len(e) for e in episodes)} steps, "
          f"{sum(e.reached_goal for e in episodes)} reached the goal by luck")

    model_cfg = ModelConfig(state_dim=4, hidden=(32, 32))
    train_cfg = TrainConfig(window=16, batch_size=32, epochs=30)
    print("training (4-d latent, 30 epochs)...")
    models, report = train_models(episodes, model_cfg, train_cfg, seed=0,
                                  log_every=10)

    first, last = report.epochs[0], report.epochs[-1]
    print(f"free energy per step: {first.free_energy:.3f} -> {last.free_energy:.3f}")
    print(f"  NLL {first.nll:.3f} -> {last.nll:.3f}, KL {first.kl:.3f} -> {last.kl:.3f}")

    heldout = [run_episode(env, random_agent_source, 200, seed=1000 + i)
               for i in range(5)]
    untrained = ModelSet.from_config(model_cfg, seed=0)
    print(f"open-loop RMS over 50 steps: trained "
          f"{open_loop_rms(models, heldout):.4f}, untrained "
          f"{open_loop_rms(untrained, heldout):.4f}")

    ep = max(heldout, key=len)
    pred, std, actual = open_loop_predictions(models, ep)
    print("\nopen-loop forecast on one held-out episode (every 10th step):")
    print(" t   truth   predicted  ~1 std")
    for t in range(0, min(50, len(pred)), 10):
        print(f"{t + 2:3d}  {actual[t]:+.3f}   {pred[t]:+.3f}    {std[t]:.3f}")
    errs = np.abs(pred[:50] - actual[:50])
    print(f"mean |error| over the first 50 steps: {errs.mean():.4f}")


if __name__ == "__main__":
    main()
