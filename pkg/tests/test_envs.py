import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from obstransfer.envs import BrokenSensor, CartPole, EpisodeDone, GridMaze, make_env, parse_maze
from obstransfer.envs.cartpole import CartPoleState, physics_step, render_frame
from obstransfer.envs.core import ObservationSpec, to_network_batch
from obstransfer.envs.gridmaze import DEFAULT_MAP, HORIZON, STEP_REWARD
from obstransfer.envs.validate import check_commutation, validate_builtin

seeds = st.integers(0, 2**31 - 1)
UP, DOWN, LEFT, RIGHT = range(4)


def maze_at(agent, goal, face="vector"):
    env = GridMaze(face)
    env.reset(0)
    env.set_from_vector(np.array([agent[0] / 8, agent[1] / 8, goal[0] / 8, goal[1] / 8]))
    return env


# ---------------------------------------------------------------- GridMaze

@given(seeds)
def test_maze_reset_is_deterministic_and_valid(seed):
    env = GridMaze("vector")
    a = env.reset(seed)
    s = env.state
    assert s.agent != s.goal
    assert not env.walls[s.agent[1], s.agent[0]] and not env.walls[s.goal[1], s.goal[0]]
    np.testing.assert_array_equal(env.reset(seed), a)


def test_maze_step_moves_and_bumps():
    env = maze_at((2, 3), (7, 7))
    assert not env.walls[2, 2]
    tr = env.step(UP)
    assert env.state.agent == (2, 2) and tr.reward == STEP_REWARD and not tr.done
    # (2, 2) has a wall to its left at (1, 2)
    assert env.walls[2, 1]
    tr = env.step(LEFT)
    assert env.state.agent == (2, 2) and tr.reward == STEP_REWARD


def test_maze_reaching_goal_ends_episode():
    env = maze_at((6, 7), (7, 7))
    tr = env.step(RIGHT)
    assert tr.reward == 1.0 and tr.done and not env.truncated
    with pytest.raises(EpisodeDone):
        env.step(UP)


def test_maze_horizon_truncates():
    env = maze_at((0, 0), (7, 7))
    for _ in range(HORIZON):
        tr = env.step(UP)
    assert tr.done and env.truncated


@given(seeds)
def test_maze_pixel_rendering(seed):
    env = GridMaze("pixel")
    img = env.reset(seed)
    assert img.shape == (8, 8, 3)
    assert img[:, :, 0].sum() == 1 and img[:, :, 1].sum() == 1
    np.testing.assert_array_equal(img[:, :, 2], env.walls)
    assert img.min() >= 0 and img.max() <= 1


def test_maze_decode_example():
    env = maze_at((2, 2), (5, 7), "pixel")
    np.testing.assert_array_equal(env.observation_map_f(env.observe()), [2 / 8, 2 / 8, 5 / 8, 7 / 8])


def test_maze_f_round_trips_1000_states():
    vec, pix = GridMaze("vector"), GridMaze("pixel")
    rng = np.random.default_rng(0)
    cells = vec.open_cells
    for _ in range(1000):
        i, j = rng.choice(len(cells), size=2, replace=False)
        v = np.array([cells[i][0] / 8, cells[i][1] / 8, cells[j][0] / 8, cells[j][1] / 8])
        vec.set_from_vector(v)
        pix.set_from_vector(v)
        np.testing.assert_array_equal(pix.observation_map_f(pix.observe()), vec.observe())


def test_maze_decode_rejects_bad_images():
    env = GridMaze("pixel")
    with pytest.raises(ValueError, match="undecodable"):
        env.observation_map_f(np.zeros((8, 8, 3)))
    with pytest.raises(ValueError, match="undecodable"):
        env.observation_map_f(np.zeros((4, 4, 3)))


def test_maze_bfs_against_brute_force():
    env = GridMaze("vector")
    # Bellman-Ford style relaxation as an independent distance oracle
    cells = env.open_cells
    goal = cells[5]
    dist = {c: math.inf for c in cells}
    dist[goal] = 0
    for _ in range(len(cells)):
        for c in cells:
            for a in range(4):
                n = env._move(c, a)
                dist[c] = min(dist[c], dist[n] + 1)
    for c in cells:
        expected = -1 if math.isinf(dist[c]) else dist[c]
        assert env.shortest_path(c, goal) == expected
    d = env.shortest_path((0, 0), goal)
    assert env.optimal_return((0, 0), goal) == pytest.approx(STEP_REWARD * (d - 1) + 1.0)


def test_maze_fixed_goal_mode():
    env = GridMaze("vector", goal_mode="fixed")
    goals = {(env.reset(s), env.state.goal)[1] for s in range(20)}
    assert goals == {env.fixed_goal}


def test_maze_map_parsing():
    assert parse_maze(DEFAULT_MAP).shape == (8, 8)
    with pytest.raises(ValueError, match="length"):
        parse_maze("...\n..\n")
    with pytest.raises(ValueError, match="invalid"):
        parse_maze("..x\n...\n")


def test_maze_map_file(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("....\n.##.\n....\n", encoding="utf-8")
    env = make_env("gridmaze", "pixel", map_path=str(p))
    assert env.reset(3).shape == (3, 4, 3)


@given(seeds, st.lists(st.integers(0, 3), min_size=1, max_size=40))
def test_maze_faces_share_trajectories(seed, actions):
    vec, pix = GridMaze("vector"), GridMaze("pixel")
    vec.reset(seed)
    pix.reset(seed)
    for a in actions:
        tv, tp = vec.step(a), pix.step(a)
        np.testing.assert_array_equal(pix.observation_map_f(tp.next_obs), tv.next_obs)
        assert (tv.reward, tv.done) == (tp.reward, tp.done)
        if tv.done:
            break


# ---------------------------------------------------------------- CartPole

def hand_euler(x, x_dot, th, th_dot, force):
    """One step of the cart-pole equations written out independently."""
    g, mc, mp, l, tau = 9.8, 1.0, 0.1, 0.5, 0.02
    m = mc + mp
    tmp = (force + mp * l * th_dot ** 2 * math.sin(th)) / m
    th_acc = (g * math.sin(th) - math.cos(th) * tmp) / (l * (4 / 3 - mp * math.cos(th) ** 2 / m))
    x_acc = tmp - mp * l * th_acc * math.cos(th) / m
    return x_dot + tau * x_acc, th_dot + tau * th_acc


def test_cartpole_one_step_from_rest():
    s = physics_step(CartPoleState(0.0, 0.0, 0.0, 0.0), 1)
    assert round(s.x_dot, 5) == 0.19512
    assert round(s.theta_dot, 5) == -0.29268


@given(st.floats(-2, 2), st.floats(-1, 1), st.floats(-0.2, 0.2), st.floats(-1, 1),
       st.integers(0, 1))
def test_cartpole_step_matches_hand_integration(x, xd, th, thd, a):
    new_xd, new_thd = hand_euler(x, xd, th, thd, 10.0 if a == 1 else -10.0)
    s = physics_step(CartPoleState(x, xd, th, thd), a)
    assert s.x == pytest.approx(x + 0.02 * new_xd, abs=1e-12)
    assert s.theta == pytest.approx(th + 0.02 * new_thd, abs=1e-12)
    assert s.x_dot == pytest.approx(new_xd, abs=1e-9)
    assert s.theta_dot == pytest.approx(new_thd, abs=1e-9)


@given(seeds)
def test_cartpole_reset_draws_from_seeded_stream(seed):
    env = CartPole("vector")
    obs = env.reset(seed)
    np.testing.assert_array_equal(obs, np.random.default_rng(seed).uniform(-0.05, 0.05, 4))
    assert np.all(np.abs(obs) <= 0.05)


def test_cartpole_terminates_on_angle_and_time():
    env = CartPole("vector")
    env.reset(0)
    steps = 0
    while True:
        tr = env.step(1)
        steps += 1
        if tr.done:
            break
    assert abs(env.state.theta) > 12 * math.pi / 180 or abs(env.state.x) > 2.4
    assert not env.truncated and steps < 200
    env.reset(0)
    env.set_from_vector(np.zeros(4), steps_taken=199)
    tr = env.step(0)
    assert tr.done and env.truncated


def test_cartpole_pixel_difference_frames():
    env = CartPole("pixel")
    first = env.reset(0)
    assert first.shape == (40, 90, 1)
    np.testing.assert_array_equal(first[:, :, 0], render_frame(env.state) - 0.0)
    assert first.min() >= 0 and first.max() == 1
    # identical consecutive physical states give a blank difference
    env.prev_frame = render_frame(env.state)
    assert not env.render_pixel().any()
    tr = env.step(1)
    assert tr.next_obs.min() >= -1 and tr.next_obs.max() <= 1


# ---------------------------------------------------------------- broken sensor

def test_broken_sensor_dims():
    assert make_env("cartpole", "stacked").observation_spec.shape == (4,)
    assert make_env("gridmaze", "stacked").observation_spec.shape == (12,)


def test_broken_sensor_rejects_unrecoverable_drops():
    with pytest.raises(ValueError, match="stack_depth"):
        BrokenSensor(CartPole(), (1,), 1)
    with pytest.raises(ValueError, match="rebuilt"):
        BrokenSensor(CartPole(), (0,), 2)
    with pytest.raises(ValueError, match="vector-face"):
        BrokenSensor(GridMaze("pixel"), (), 2)


def test_broken_sensor_zero_history_then_frames():
    env = BrokenSensor(CartPole(), (1, 3), 2)
    obs = env.reset(5)
    np.testing.assert_array_equal(obs[:2], [0.0, 0.0])
    base = env.env.vector_obs()
    np.testing.assert_array_equal(obs[2:], base[[0, 2]])


@given(seeds, st.lists(st.integers(0, 1), min_size=1, max_size=8))
def test_stacked_positions_recover_velocity(seed, actions):
    env = BrokenSensor(CartPole(), (1, 3), 2)
    env.reset(seed)
    for a in actions:
        tr = env.step(a)
        s = env.env.state
        prev, last = tr.next_obs[:2], tr.next_obs[2:]
        assert (last[0] - prev[0]) / 0.02 == s.x_dot
        assert (last[1] - prev[1]) / 0.02 == s.theta_dot
        np.testing.assert_array_equal(env.observation_map_f(tr.next_obs), env.env.vector_obs())
        if tr.done:
            break


# ---------------------------------------------------------------- validator / specs

def test_validator_on_builtin_pairs():
    reports = validate_builtin(200, seed=3)
    assert [r.passed for r in reports] == [True] * len(reports)


def test_validator_catches_a_wrong_map():
    src, tgt = GridMaze("vector"), GridMaze("pixel")

    def shifted(img):
        v = tgt.observation_map_f(img)
        return np.array([v[1], v[0], v[2], v[3]])  # swap x and y

    report = check_commutation("broken", src, tgt, shifted, 50, seed=0)
    assert not report.passed


def test_observation_spec_contract():
    spec = ObservationSpec.image(2, 3, 1)
    assert spec.network_input_shape() == (1, 2, 3)
    with pytest.raises(ValueError, match="outside"):
        spec.check(np.full((2, 3, 1), 2.0))
    with pytest.raises(ValueError):
        ObservationSpec.vector(0)
    batch = np.arange(12.0).reshape(2, 2, 3, 1)
    np.testing.assert_array_equal(to_network_batch(spec, batch)[1, 0], batch[1, :, :, 0])


def test_invalid_action_and_env_names():
    env = GridMaze()
    env.reset(0)
    with pytest.raises(ValueError, match="action"):
        env.step(4)
    with pytest.raises(ValueError, match="unknown environment"):
        make_env("acrobot")
