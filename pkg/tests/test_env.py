"""Mountain-car dynamics, agents, episodes, and the trajectory file format."""

import numpy as np
import pytest

from aif.errors import ContractError, FormatError
from aif.mountain_car import (CarState, MountainCar, Step, Trajectory,
                              expert_source, load_trajectories,
                              random_agent_action, random_agent_source,
                              run_episode, save_trajectories,
                              scripted_expert_action)

# Frozen with mpmath from the update rule.
V_AFTER_PUSH_RIGHT = 0.0013231569958307428   # from (-0.5, 0), action +1
X_AFTER_PUSH_RIGHT = -0.49867684300416926
V_AFTER_PUSH_LEFT = 0.026436660962725803     # from (0.2, 0.03), action -1
X_AFTER_PUSH_LEFT = 0.2264366609627258


def test_dynamics_match_hand_values():
    env = MountainCar(noise_std=0.0)
    state, obs, reward, done = env.step(CarState(-0.5, 0.0), 1.0)
    assert state.velocity == pytest.approx(V_AFTER_PUSH_RIGHT, abs=1e-15)
    assert state.position == pytest.approx(X_AFTER_PUSH_RIGHT, abs=1e-15)
    assert obs == state.position
    assert (reward, done) == (0.0, False)

    state, _, _, _ = env.step(CarState(0.2, 0.03), -1.0)
    assert state.velocity == pytest.approx(V_AFTER_PUSH_LEFT, abs=1e-15)
    assert state.position == pytest.approx(X_AFTER_PUSH_LEFT, abs=1e-15)


def test_action_clipped_and_validated():
    env = MountainCar(noise_std=0.0)
    big, _, _, _ = env.step(CarState(-0.5, 0.0), 5.0)
    one, _, _, _ = env.step(CarState(-0.5, 0.0), 1.0)
    assert big == one
    with pytest.raises(ContractError):
        env.step(CarState(-0.5, 0.0), float("nan"))


def test_velocity_and_position_bounds():
    env = MountainCar(noise_std=0.0)
    state = CarState(-0.5, 0.0)
    rng = np.random.default_rng(0)
    for _ in range(500):
        state, _, _, done = env.step(state, rng.uniform(-1, 1))
        assert -1.2 <= state.position <= 0.6
        assert -0.07 <= state.velocity <= 0.07
        if done:
            break


def test_left_wall_absorbs_velocity():
    env = MountainCar(noise_std=0.0)
    state = CarState(-1.2, -0.05)
    state, _, _, _ = env.step(state, -1.0)
    assert state.position == -1.2
    assert state.velocity == 0.0


def test_goal_gives_reward_and_done():
    env = MountainCar(noise_std=0.0)
    state, _, reward, done = env.step(CarState(0.449, 0.07), 1.0)
    assert state.position >= 0.45
    assert (reward, done) == (1.0, True)


def test_reset_ranges():
    env = MountainCar()
    rng = np.random.default_rng(1)
    for _ in range(100):
        state, _ = env.reset(rng)
        assert -0.6 <= state.position <= -0.4
        assert state.velocity == 0.0
    state, _ = env.reset(rng, start_position=0.1)
    assert state.position == 0.1
    with pytest.raises(ContractError):
        env.reset(rng, start_position=0.7)


def test_observation_noise_statistics():
    env = MountainCar(noise_std=0.05)
    rng = np.random.default_rng(2)
    obs = np.array([env._observe(-0.5, rng) for _ in range(20000)])
    assert obs.mean() == pytest.approx(-0.5, abs=3 * 0.05 / np.sqrt(20000))
    assert obs.std() == pytest.approx(0.05, rel=0.05)


def test_random_agent_repeat_rate():
    rng = np.random.default_rng(3)
    prev = 0.3
    repeats = sum(random_agent_action(prev, rng) == prev for _ in range(20000))
    assert repeats / 20000 == pytest.approx(0.9, abs=0.01)
    first = random_agent_action(None, rng)
    assert -1.0 <= first <= 1.0


def test_expert_pumps_energy():
    assert scripted_expert_action(CarState(-0.5, 0.01)) == 1.0
    assert scripted_expert_action(CarState(-0.5, -0.01)) == -1.0
    assert scripted_expert_action(CarState(-0.5, 0.0)) == 1.0


def test_expert_reaches_goal_from_spec_starts():
    env = MountainCar(noise_std=0.05)
    for i, start in enumerate(np.linspace(-0.6, -0.4, 5)):
        traj = run_episode(env, expert_source, 200, seed=50 + i,
                           start_position=float(start))
        assert traj.reached_goal
        assert traj.steps[-1].reward == 1.0
        assert traj.steps[-1].done


def test_greedy_push_right_fails_from_valley():
    env = MountainCar(noise_std=0.0)
    traj = run_episode(env, lambda s, p, r: 1.0, 1000, seed=0, start_position=-0.5)
    assert not traj.reached_goal


def test_run_episode_seeded_and_bounded():
    env = MountainCar()
    a = run_episode(env, random_agent_source, 200, seed=7)
    b = run_episode(env, random_agent_source, 200, seed=7)
    assert a.steps == b.steps
    assert a.start_position == b.start_position
    assert len(a) <= 200
    assert np.all(np.abs(a.actions()) <= 1.0)
    with pytest.raises(ContractError):
        run_episode(env, random_agent_source, 0, seed=1)


def test_episode_stops_at_goal():
    env = MountainCar()
    traj = run_episode(env, expert_source, 200, seed=9, start_position=-0.5)
    assert traj.steps[-1].done
    assert all(not s.done for s in traj.steps[:-1])
    assert sum(s.reward for s in traj.steps) == 1.0


def test_trajectory_file_round_trip(tmp_path):
    env = MountainCar()
    episodes = [run_episode(env, random_agent_source, 50, seed=i) for i in range(3)]
    path = tmp_path / "episodes.traj"
    save_trajectories(path, episodes)
    loaded = load_trajectories(path)
    assert len(loaded) == len(episodes)
    for orig, back in zip(episodes, loaded):
        assert orig.steps == back.steps
    save_trajectories(tmp_path / "again.traj", loaded)
    assert (tmp_path / "again.traj").read_bytes() == path.read_bytes()


def test_trajectory_file_header_checked(tmp_path):
    path = tmp_path / "bad.traj"
    path.write_text("WRONG v9\n")
    with pytest.raises(FormatError):
        load_trajectories(path)


def test_trajectory_file_is_csv_per_step(tmp_path):
    env = MountainCar()
    episodes = [run_episode(env, random_agent_source, 5, seed=0)]
    path = tmp_path / "one.traj"
    save_trajectories(path, episodes)
    lines = path.read_text().splitlines()
    assert lines[0] == "AIFTRAJ v1"
    # Schema: episode_id, t, action, observation, reward, done.
    first = lines[1].split(",")
    assert len(first) == 6
    assert first[0] == "0" and first[1] == "1"
    assert first[5] in ("0", "1")
    assert -1.0 <= float(first[2]) <= 1.0


def test_trajectory_array_accessors():
    steps = [Step(0.5, -0.4, 0.0, False), Step(-0.25, -0.38, 1.0, True)]
    traj = Trajectory(steps=steps, start_position=-0.5, seed=1)
    np.testing.assert_array_equal(traj.actions(), [0.5, -0.25])
    np.testing.assert_array_equal(traj.observations(), [-0.4, -0.38])
    np.testing.assert_array_equal(traj.rewards(), [0.0, 1.0])
    assert traj.reached_goal
    assert len(traj) == 2
