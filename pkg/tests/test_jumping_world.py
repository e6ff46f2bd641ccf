import json

import numpy as np
import pytest

from advrate.errors import ConfigError, ContractError, ShapeError
from advrate.jumping_world import (COLLISION_REWARD, DOWN, GOAL_REWARD, LEFT, MOVES, RIGHT,
                                   STEP_REWARD, UP, EpisodeTrace, GridConfig, WorldState, observe,
                                   reachable, reset, rollout, run_episode, sensor_bits, step,
                                   traces_to_jsonl)
from advrate.network import Network, init_network


def constant_net(action, n_in=8):
    bias = np.zeros(4)
    bias[action] = 1.0
    return Network.from_arrays([np.zeros((4, n_in))], [bias])


def test_pigeonhole_config_error():
    with pytest.raises(ConfigError):
        GridConfig(width=5, height=5, n_obstacles=24)
    with pytest.raises(ConfigError):
        GridConfig(noise_half_width=0.6)


def test_dense_grid_layout_failure():
    # 3x3 with 7 obstacles: agent and target fit but are almost never connected
    cfg = GridConfig(width=3, height=3, n_obstacles=7)
    rng = np.random.default_rng(0)
    try:
        state, _ = reset(cfg, rng)
    except ConfigError:
        return
    assert reachable(cfg, state.agent_cell, state.target_cell, state.obstacle_cells)


def test_no_obstacles_sensors_only_walls():
    cfg = GridConfig(n_obstacles=0)
    rng = np.random.default_rng(1)
    for _ in range(200):
        state, obs = reset(cfg, rng)
        x, y = state.agent_cell
        expect = [x == 0, x == cfg.width - 1, y == cfg.height - 1, y == 0]
        assert obs[2:6].tolist() == [float(e) for e in expect]


def test_reset_deterministic_under_seed():
    cfg = GridConfig()
    a = reset(cfg, np.random.default_rng(7))
    b = reset(cfg, np.random.default_rng(7))
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_step_examples():
    cfg = GridConfig()
    rng = np.random.default_rng(0)
    s = WorldState((2, 3), (6, 6), frozenset({(3, 3)}))
    _, _, r, term = step(cfg, s, RIGHT, rng)
    assert (r, term) == (COLLISION_REWARD, "collision")
    s = WorldState((5, 6), (6, 6), frozenset())
    _, _, r, term = step(cfg, s, RIGHT, rng)
    assert (r, term, s.agent_cell) == (GOAL_REWARD, "goal", (6, 6))
    s = WorldState((4, 4), (6, 6), frozenset())
    _, _, r, term = step(cfg, s, UP, rng)
    assert (r, term, s.agent_cell) == (STEP_REWARD, "none", (4, 5))
    s = WorldState((0, 4), (6, 6), frozenset())
    _, _, r, term = step(cfg, s, LEFT, rng)
    assert term == "collision" and s.agent_cell == (0, 4)
    with pytest.raises(ContractError):
        step(cfg, s, LEFT, rng)


def test_timeout():
    cfg = GridConfig(max_steps=3)
    s = WorldState((4, 4), (8, 8), frozenset())
    rng = np.random.default_rng(0)
    for a in (UP, DOWN, UP):
        _, _, r, term = step(cfg, s, a, rng)
    assert term == "timeout" and r == STEP_REWARD


def test_transition_determinism_from_copies():
    cfg = GridConfig()
    rng = np.random.default_rng(2)
    for _ in range(100):
        state, _ = reset(cfg, rng)
        a = int(rng.integers(4))
        s1, s2 = state.copy(), state.copy()
        step(cfg, s1, a, np.random.default_rng(0))
        step(cfg, s2, a, np.random.default_rng(99))
        assert s1 == s2


def test_sensor_bits_brute_force():
    cfg = GridConfig()
    rng = np.random.default_rng(3)
    for _ in range(10_000):
        state, obs = reset(cfg, rng)
        ax, ay = state.agent_cell
        ref = []
        for nx, ny in [(ax - 1, ay), (ax + 1, ay), (ax, ay + 1), (ax, ay - 1)]:
            outside = nx < 0 or ny < 0 or nx >= cfg.width or ny >= cfg.height
            ref.append(1.0 if outside or (nx, ny) in state.obstacle_cells else 0.0)
        assert obs[2:6].tolist() == ref


def test_noise_containment_and_rewards():
    cfg = GridConfig()
    net = init_network(8, (16,), 4, "relu", np.random.default_rng(4))
    traces = rollout(net, cfg, 200, np.random.default_rng(5), "softmax_sample")
    for tr in traces:
        start = tr.start["agent"]
        pos = [np.array(start)]
        for a in tr.actions[:-1]:
            pos.append(pos[-1] + MOVES[a])
        for obs, p in zip(tr.observations, pos):
            assert np.all(np.abs(obs[:2] - p) <= 0.5)
            assert obs[6:].tolist() == tr.start["target"]
        expect = {"goal": GOAL_REWARD, "collision": COLLISION_REWARD}.get(tr.terminal, STEP_REWARD)
        assert tr.rewards[-1] == expect
        assert all(r == STEP_REWARD for r in tr.rewards[:-1])
        assert tr.total_reward == pytest.approx(sum(tr.rewards))


def test_always_left_policy():
    cfg = GridConfig()
    for tr in rollout(constant_net(LEFT), cfg, 100, np.random.default_rng(6)):
        assert set(tr.actions) == {LEFT}
        assert tr.terminal in ("collision", "goal")


def test_rollout_reproducible_and_shape_checked():
    cfg = GridConfig()
    net = init_network(8, (8,), 4, "tanh", np.random.default_rng(8))
    a = rollout(net, cfg, 20, np.random.default_rng(9))
    b = rollout(net, cfg, 20, np.random.default_rng(9))
    assert traces_to_jsonl(a) == traces_to_jsonl(b)
    with pytest.raises(ShapeError):
        rollout(init_network(7, (8,), 4, "relu", 0), cfg, 1, 0)
    with pytest.raises(ContractError):
        rollout(net, cfg, 1, 0, "epsilon_greedy")


def test_trace_jsonl_round_trip():
    cfg = GridConfig()
    tr = rollout(constant_net(UP), cfg, 3, np.random.default_rng(10))
    lines = traces_to_jsonl(tr).splitlines()
    back = [EpisodeTrace.from_dict(json.loads(line)) for line in lines]
    assert traces_to_jsonl(back) == traces_to_jsonl(tr)
    assert [len(t) for t in back] == [len(t) for t in tr]


def test_observation_target_is_exact():
    cfg = GridConfig()
    s = WorldState((1, 1), (4, 7), frozenset({(1, 2)}))
    obs = observe(cfg, s, np.random.default_rng(0))
    assert obs[6:].tolist() == [4.0, 7.0]
    assert sensor_bits(cfg, (1, 1), s.obstacle_cells).tolist() == [0, 0, 1, 0]


def test_run_episode_does_not_leak_between_states():
    cfg = GridConfig()
    s = WorldState((4, 4), (4, 6), frozenset())
    obs = observe(cfg, s, np.random.default_rng(0))
    tr = run_episode(constant_net(UP), cfg, s, obs, np.random.default_rng(0))
    assert tr.terminal == "goal" and len(tr) == 2
