"""Command-line pipeline: collect data, train the world model, build priors,
evaluate the planner, train the habit policy, evaluate, and export plot data.

Every stage reads upstream artifacts from the output directory, derives its
randomness from the run seed, and writes a text report embedding the exact
config. Reports and artifacts carry no wall-clock content, so a rerun with
the same config and seed reproduces every file byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import (ContractError, DependencyError, ExpertFailedError,
                     FormatError, InsufficientRewardDataError)
from .habit import evaluate_policy, load_policy, save_policy, train_policy
from .mountain_car import (MountainCar, expert_source, load_trajectories,
                           random_agent_source, run_episode, save_trajectories)
from .planning import act_in_env, diagnostics_csv, plan
from .preferences import (flat_prior, load_prior, prior_from_demos,
                          prior_from_reward, save_prior)
from .world_model import (ModelSet, encode_episode, load_model_set,
                          open_loop_predictions, open_loop_rms, posterior_infer,
                          save_model_set, train_models)

RANDOM_EPISODES = "random_episodes.traj"
EXPERT_DEMOS = "expert_demos.traj"
WORLD_MODEL = "world_model.aifnet"
MODEL_CURVE = "model_training.csv"
HABIT_POLICY = "habit_policy.aifnet"
POLICY_CURVE = "policy_g_curve.csv"
POLICY_EVAL = "policy_eval.csv"
POLICY_ROLLOUTS = "policy_rollouts.traj"
PLANNER_EVAL = "planner_eval.csv"
MANIFEST = "MANIFEST.sha256"


def prior_file(mode: str) -> str:
    return f"prior_{mode}.aifprior"


def plan_diag_file(mode: str) -> str:
    return f"plan_diag_{mode}.csv"


def _stage_seed(base: int, *codes: int) -> int:
    return int(np.random.SeedSequence([base, *codes]).generate_state(1)[0])


def _require(out: Path, name: str, stage: str) -> Path:
    path = out / name
    if not path.exists():
        raise DependencyError(f"missing required artifact {path} (run '{stage}' first)")
    return path


def _write_report(out: Path, stage: str, config: RunConfig, metrics: dict):
    lines = [f"{stage} report", f"config: {config.to_json()}"]
    for key in sorted(metrics):
        lines.append(f"{key}: {metrics[key]}")
    (out / f"{stage}_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_collect(config: RunConfig, out: Path):
    env = MountainCar(noise_std=config.env.noise_std)
    episodes = [
        run_episode(env, random_agent_source, config.env.max_steps,
                    seed=_stage_seed(config.seed, 1, i))
        for i in range(config.episodes)
    ]
    save_trajectories(out / RANDOM_EPISODES, episodes)
    _write_report(out, "collect", config, {
        "episodes": len(episodes),
        "total_steps": sum(len(e) for e in episodes),
        "rewarded_episodes": sum(e.reached_goal for e in episodes),
    })


def cmd_record_expert(config: RunConfig, out: Path):
    env = MountainCar(noise_std=config.env.noise_std)
    starts = np.linspace(-0.6, -0.4, config.expert_episodes)
    episodes = []
    for i, start in enumerate(starts):
        ep = run_episode(env, expert_source, config.env.max_steps,
                         seed=_stage_seed(config.seed, 2, i), start_position=float(start))
        if not ep.reached_goal:
            raise ExpertFailedError(f"expert failed to reach goal from start {start:.3f}")
        episodes.append(ep)
    save_trajectories(out / EXPERT_DEMOS, episodes)
    _write_report(out, "record_expert", config, {
        "episodes": len(episodes),
        "starts": ",".join(repr(float(s)) for s in starts),
        "steps_to_goal": ",".join(str(len(e)) for e in episodes),
    })


def cmd_train_model(config: RunConfig, out: Path):
    dataset = load_trajectories(_require(out, RANDOM_EPISODES, "collect"))
    seed = _stage_seed(config.seed, 3)
    models, report = train_models(dataset, config.model, config.training, seed=seed)
    save_model_set(out / WORLD_MODEL, models, meta={"seed": seed})
    (out / MODEL_CURVE).write_text(report.to_csv(), encoding="utf-8")

    env = MountainCar(noise_std=config.env.noise_std)
    heldout = [run_episode(env, random_agent_source, config.env.max_steps,
                           seed=_stage_seed(config.seed, 3, 1000 + i))
               for i in range(20)]
    untrained = ModelSet.from_config(config.model, seed=seed)
    rms = open_loop_rms(models, heldout, steps=50)
    rms_untrained = open_loop_rms(untrained, heldout, steps=50)
    _write_report(out, "train_model", config, {
        "final_free_energy": repr(report.final_free_energy),
        "final_nll": repr(report.epochs[-1].nll),
        "final_kl": repr(report.epochs[-1].kl),
        "open_loop_rms_50": repr(rms),
        "open_loop_rms_50_untrained": repr(rms_untrained),
        "rms_improvement_factor": repr(rms_untrained / rms),
    })


def cmd_build_prior(config: RunConfig, out: Path, mode: str,
                    threshold: int | None = None):
    horizon = config.prior.horizon
    if mode == "flat":
        prior = flat_prior(config.model.state_dim, horizon)
        metrics = {}
    else:
        models, _ = load_model_set(_require(out, WORLD_MODEL, "train-model"))
        if mode == "demos":
            demos = load_trajectories(_require(out, EXPERT_DEMOS, "record-expert"))
            prior = prior_from_demos(models, demos, horizon)
            decoded = models.likelihood.forward(prior.means[-1])
            metrics = {"demos": len(demos),
                       "decoded_final_mean": repr(float(decoded.mean_value[0]))}
        elif mode == "reward":
            dataset = load_trajectories(_require(out, RANDOM_EPISODES, "collect"))
            t = config.prior.reward_threshold if threshold is None else threshold
            prior = prior_from_reward(models, dataset, threshold_t=t, horizon=horizon)
            metrics = {"threshold": t,
                       "rewarded_episodes": sum(ep.reached_goal for ep in dataset)}
        else:
            raise ContractError(f"unknown prior mode {mode!r}")
    save_prior(out / prior_file(mode), prior)
    metrics.update({"mode": mode, "horizon": prior.horizon,
                    "active_timesteps": int(prior.active.sum())})
    _write_report(out, f"build_prior_{mode}", config, metrics)


_MODE_CODES = {"demos": 41, "reward": 42}


def _diagnostic_belief(config: RunConfig, models: ModelSet, seed: int):
    """Belief after one null action from the diagnostic start position."""
    env = MountainCar(noise_std=config.env.noise_std)
    rng = np.random.default_rng(seed)
    state, _ = env.reset(rng, config.eval.diag_start)
    _, obs, _, _ = env.step(state, 0.0, rng)
    return posterior_infer(models, np.zeros(models.state_dim), 0.0, obs)


def cmd_plan_eval(config: RunConfig, out: Path):
    models, _ = load_model_set(_require(out, WORLD_MODEL, "train-model"))
    modes = [m for m in ("demos", "reward") if (out / prior_file(m)).exists()]
    if not modes:
        raise DependencyError(
            f"missing required artifact {out / prior_file('demos')} "
            f"or {out / prior_file('reward')} (run 'build-prior' first)")
    seed = _stage_seed(config.seed, 4)
    belief = _diagnostic_belief(config, models, seed)
    metrics = {}
    for mode in modes:
        prior = load_prior(out / prior_file(mode))
        diag_cfg = replace(config.planner,
                           num_candidates=config.eval.diag_candidates,
                           horizon=min(config.eval.diag_horizon, prior.horizon))
        rng = np.random.default_rng(_stage_seed(config.seed, 4, _MODE_CODES[mode]))
        _, diag = plan(models, belief, prior, 1, diag_cfg, rng)
        (out / plan_diag_file(mode)).write_text(diagnostics_csv(diag), encoding="utf-8")
        hit = diag.reached_goal
        metrics[f"{mode}_candidates"] = len(diag.g_values)
        metrics[f"{mode}_reached"] = int(hit.sum())
        if hit.any() and (~hit).any():
            metrics[f"{mode}_mean_g_reached"] = repr(float(diag.g_values[hit].mean()))
            metrics[f"{mode}_mean_g_missed"] = repr(float(diag.g_values[~hit].mean()))
    _write_report(out, "plan_eval", config, metrics)


def cmd_train_policy(config: RunConfig, out: Path):
    models, _ = load_model_set(_require(out, WORLD_MODEL, "train-model"))
    for mode in ("reward", "demos"):
        path = out / prior_file(mode)
        if path.exists():
            prior = load_prior(path)
            break
    else:
        raise DependencyError(
            f"missing required artifact {out / prior_file('reward')} (run 'build-prior' first)")
    dataset = load_trajectories(_require(out, RANDOM_EPISODES, "collect"))
    seed = _stage_seed(config.seed, 5)
    policy, curve = train_policy(models, prior, dataset, config.policy, seed=seed)
    save_policy(out / HABIT_POLICY, policy, meta={"seed": seed, "prior_mode": prior.mode})
    lines = ["iteration,mean_g"] + [f"{i},{g!r}" for i, g in enumerate(curve)]
    (out / POLICY_CURVE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    tenth = max(1, len(curve) // 10)
    _write_report(out, "train_policy", config, {
        "iterations": len(curve),
        "prior_mode": prior.mode,
        "mean_g_first_tenth": repr(float(np.mean(curve[:tenth]))),
        "mean_g_last_tenth": repr(float(np.mean(curve[-tenth:]))),
    })


def cmd_evaluate(config: RunConfig, out: Path):
    models, _ = load_model_set(_require(out, WORLD_MODEL, "train-model"))
    policy, _ = load_policy(_require(out, HABIT_POLICY, "train-policy"))
    env = MountainCar(noise_std=config.env.noise_std)
    n = config.eval.num_starts
    start_rng = np.random.default_rng(_stage_seed(config.seed, 6, 0))
    starts = start_rng.uniform(config.eval.start_low, config.eval.start_high, size=n)
    seeds = [_stage_seed(config.seed, 6, 1, i) for i in range(n)]
    result, rollouts = evaluate_policy(policy, models, env, starts, seeds,
                                       max_steps=config.env.max_steps)
    (out / POLICY_EVAL).write_text(result.to_csv(), encoding="utf-8")
    save_trajectories(out / POLICY_ROLLOUTS, rollouts)

    greedy_wins = 0
    for i in range(n):
        ep = run_episode(env, lambda s, p, r: 1.0, config.env.max_steps,
                         seed=_stage_seed(config.seed, 6, 2, i),
                         start_position=config.eval.diag_start)
        greedy_wins += ep.reached_goal
    random_wins = 0
    for i, start in enumerate(starts):
        ep = run_episode(env, random_agent_source, config.env.max_steps,
                         seed=_stage_seed(config.seed, 6, 3, i),
                         start_position=float(start))
        random_wins += ep.reached_goal

    metrics = {
        "policy_successes": sum(result.successes),
        "policy_success_rate": repr(result.success_rate),
        "policy_mean_steps_to_goal": repr(result.mean_steps_to_goal),
        "greedy_baseline_successes": int(greedy_wins),
        "random_baseline_successes": int(random_wins),
    }

    demo_prior_path = out / prior_file("demos")
    if demo_prior_path.exists():
        prior = load_prior(demo_prior_path)
        lines = ["start,seed,success,steps"]
        planner_wins = 0
        for i in range(config.eval.planner_episodes):
            seed = _stage_seed(config.seed, 6, 4, i)
            traj = act_in_env(models, prior, config.planner, seed,
                              start_position=config.eval.diag_start, env=env,
                              max_steps=config.env.max_steps)
            planner_wins += traj.reached_goal
            lines.append(f"{config.eval.diag_start!r},{seed},{int(traj.reached_goal)},{len(traj)}")
        (out / PLANNER_EVAL).write_text("\n".join(lines) + "\n", encoding="utf-8")
        metrics["planner_successes"] = int(planner_wins)
        metrics["planner_episodes"] = config.eval.planner_episodes
    _write_report(out, "evaluate", config, metrics)


def cmd_export_plots(config: RunConfig, out: Path):
    models, _ = load_model_set(_require(out, WORLD_MODEL, "train-model"))
    episodes = load_trajectories(_require(out, RANDOM_EPISODES, "collect"))
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    written = []

    ep = max(episodes, key=len)
    latents = encode_episode(models, ep)
    lines = ["t," + ",".join(f"s{i}" for i in range(models.state_dim))]
    for t, row in enumerate(latents, start=1):
        lines.append(f"{t}," + ",".join(repr(float(v)) for v in row))
    (plots / "latent_trace.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append("latent_trace.csv")

    pred, std, actual = open_loop_predictions(models, ep)
    lines = ["t,truth,predicted_mean,predicted_std"]
    for t, (y, m, s) in enumerate(zip(actual, pred, std), start=2):
        lines.append(f"{t},{float(y)!r},{float(m)!r},{float(s)!r}")
    (plots / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append("predictions.csv")

    for mode in ("demos", "reward"):
        path = out / prior_file(mode)
        if not path.exists():
            continue
        prior = load_prior(path)
        decoded = models.likelihood.forward(prior.means)
        dec_mean = decoded.mean_value[:, 0]
        dec_std = np.sqrt(decoded.variance_value[:, 0])
        latent_spread = prior.variances.mean(axis=1)
        lines = ["t,active,decoded_mean,decoded_std,latent_var_mean"]
        for k in range(prior.horizon):
            lines.append(f"{k + 1},{int(prior.active[k])},{float(dec_mean[k])!r},"
                         f"{float(dec_std[k])!r},{float(latent_spread[k])!r}")
        name = f"prior_band_{mode}.csv"
        (plots / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(name)

        diag_path = out / plan_diag_file(mode)
        if diag_path.exists():
            name = f"candidates_{mode}.csv"
            (plots / name).write_bytes(diag_path.read_bytes())
            written.append(name)

    rollout_path = out / POLICY_ROLLOUTS
    if rollout_path.exists():
        lines = ["episode,t,action,observation"]
        for i, traj in enumerate(load_trajectories(rollout_path)):
            for t, step in enumerate(traj.steps, start=1):
                lines.append(f"{i},{t},{step.action!r},{step.observation!r}")
        (plots / "policy_rollouts.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append("policy_rollouts.csv")

    _write_report(out, "export_plots", config, {"files": ",".join(written)})


def cmd_reproduce(config: RunConfig, out: Path):
    cmd_collect(config, out)
    cmd_record_expert(config, out)
    cmd_train_model(config, out)
    cmd_build_prior(config, out, "demos")
    cmd_build_prior(config, out, "reward")
    cmd_build_prior(config, out, "flat")
    cmd_plan_eval(config, out)
    cmd_train_policy(config, out)
    cmd_evaluate(config, out)
    cmd_export_plots(config, out)
    write_manifest(out)


def write_manifest(out: Path):
    """Checksum every artifact so reruns can be compared in one diff."""
    entries = []
    for path in sorted(out.rglob("*")):
        if path.is_dir() or path.name == MANIFEST:
            continue
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        entries.append(f"{digest}  {path.relative_to(out).as_posix()}")
    (out / MANIFEST).write_text("\n".join(entries) + "\n", encoding="utf-8")


_COMMANDS = {
    "collect": cmd_collect,
    "record-expert": cmd_record_expert,
    "train-model": cmd_train_model,
    "build-prior": cmd_build_prior,
    "plan-eval": cmd_plan_eval,
    "train-policy": cmd_train_policy,
    "evaluate": cmd_evaluate,
    "export-plots": cmd_export_plots,
    "reproduce": cmd_reproduce,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aif", description="Active-inference mountain-car pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="JSON run config; defaults apply if omitted")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", type=Path, default=Path("run"),
                       help="artifact directory (default: ./run)")
        if name == "build-prior":
            p.add_argument("--mode", choices=("demos", "reward", "flat"), required=True)
            p.add_argument("--threshold", type=int, default=None,
                           help="reward-mode timestep threshold")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            config.seed = args.seed
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(config.to_json() + "\n", encoding="utf-8")
        if args.command == "build-prior":
            cmd_build_prior(config, out, args.mode, args.threshold)
        else:
            _COMMANDS[args.command](config, out)
    except (ContractError, FormatError, DependencyError,
            InsufficientRewardDataError, ExpertFailedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
