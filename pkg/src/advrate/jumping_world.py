"""Jumping World: a gridworld with noisy continuous position readings.

Observation layout (8 features)::

    [agent_x + u, agent_y + v, sensor_left, sensor_right, sensor_up, sensor_down, target_x, target_y]

``u, v ~ U(-h, h)`` with ``h = noise_half_width``. A sensor reads 1 when the
neighbouring cell is an obstacle or lies outside the grid; stepping into
either ends the episode as a collision. Actions are 0=left, 1=right,
2=up (y+1), 3=down (y-1). Transitions are deterministic; only the
observation noise is random.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .network import Network, argmax_action, forward

LEFT, RIGHT, UP, DOWN = 0, 1, 2, 3
ACTION_NAMES = ("left", "right", "up", "down")
MOVES = ((-1, 0), (1, 0), (0, 1), (0, -1))
OBS_DIM = 8
N_ACTIONS = 4

STEP_REWARD = -0.01
GOAL_REWARD = 1.0
COLLISION_REWARD = -1.0

MAX_LAYOUT_TRIES = 1000


@dataclass(frozen=True)
class GridConfig:
    width: int = 9
    height: int = 9
    n_obstacles: int = 10
    noise_half_width: float = 0.5
    max_steps: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("grid dimensions must be positive")
        if self.n_obstacles < 0:
            raise ConfigError("n_obstacles must be non-negative")
        if self.n_obstacles + 2 > self.width * self.height:
            raise ConfigError(
                f"{self.n_obstacles} obstacles plus agent and target do not fit in a "
                f"{self.width}x{self.height} grid")
        if not 0.0 <= self.noise_half_width <= 0.5:
            raise ConfigError("noise_half_width must lie in [0, 0.5]")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be positive")

    def in_bounds(self, cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def to_dict(self) -> dict:
        return dict(width=self.width, height=self.height, n_obstacles=self.n_obstacles,
                    noise_half_width=self.noise_half_width, max_steps=self.max_steps, seed=self.seed)


@dataclass
class WorldState:
    agent_cell: tuple
    target_cell: tuple
    obstacle_cells: frozenset
    steps_elapsed: int = 0
    terminal: str = "none"  # none | goal | collision | timeout

    def copy(self) -> "WorldState":
        return replace(self)


def sensor_bits(cfg: GridConfig, agent_cell, obstacles) -> np.ndarray:
    bits = np.zeros(4)
    for d, (dx, dy) in enumerate(MOVES):
        nxt = (agent_cell[0] + dx, agent_cell[1] + dy)
        bits[d] = float(nxt in obstacles or not cfg.in_bounds(nxt))
    return bits


def observe(cfg: GridConfig, state: WorldState, rng) -> np.ndarray:
    h = cfg.noise_half_width
    u, v = rng.uniform(-h, h, size=2) if h > 0 else (0.0, 0.0)
    ax, ay = state.agent_cell
    obs = np.empty(OBS_DIM)
    obs[0] = ax + u
    obs[1] = ay + v
    obs[2:6] = sensor_bits(cfg, state.agent_cell, state.obstacle_cells)
    obs[6] = state.target_cell[0]
    obs[7] = state.target_cell[1]
    return obs


def reachable(cfg: GridConfig, start, goal, obstacles) -> bool:
    seen = {start}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == goal:
            return True
        for dx, dy in MOVES:
            nxt = (cell[0] + dx, cell[1] + dy)
            if cfg.in_bounds(nxt) and nxt not in obstacles and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return False


def reset(cfg: GridConfig, rng) -> tuple[WorldState, np.ndarray]:
    """Random solvable layout plus its first observation."""
    n_cells = cfg.width * cfg.height
    for _ in range(MAX_LAYOUT_TRIES):
        picks = rng.choice(n_cells, size=cfg.n_obstacles + 2, replace=False)
        cells = [(int(p) % cfg.width, int(p) // cfg.width) for p in picks]
        agent, target, obstacles = cells[0], cells[1], frozenset(cells[2:])
        if reachable(cfg, agent, target, obstacles):
            state = WorldState(agent, target, obstacles)
            return state, observe(cfg, state, rng)
    raise ConfigError(f"no solvable layout found in {MAX_LAYOUT_TRIES} tries; grid too dense")


def step(cfg: GridConfig, state: WorldState, action: int, rng):
    """Advance one step in place. Returns ``(state, obs, reward, terminal)``."""
    if state.terminal != "none":
        raise ContractError("step called on a terminal state")
    if action not in (0, 1, 2, 3):
        raise ContractError(f"invalid action {action!r}")
    dx, dy = MOVES[action]
    nxt = (state.agent_cell[0] + dx, state.agent_cell[1] + dy)
    state.steps_elapsed += 1
    if not cfg.in_bounds(nxt):
        state.terminal = "collision"
        reward = COLLISION_REWARD
    elif nxt in state.obstacle_cells:
        state.agent_cell = nxt
        state.terminal = "collision"
        reward = COLLISION_REWARD
    elif nxt == state.target_cell:
        state.agent_cell = nxt
        state.terminal = "goal"
        reward = GOAL_REWARD
    else:
        state.agent_cell = nxt
        reward = STEP_REWARD
        if state.steps_elapsed >= cfg.max_steps:
            state.terminal = "timeout"
    return state, observe(cfg, state, rng), reward, state.terminal


@dataclass
class EpisodeTrace:
    observations: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    terminal: str = "none"
    start: dict | None = None

    def __len__(self):
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "observations": [[float(v) for v in o] for o in self.observations],
            "actions": [int(a) for a in self.actions],
            "rewards": [float(r) for r in self.rewards],
            "terminal": self.terminal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeTrace":
        return cls([np.array(o) for o in d["observations"]], list(d["actions"]),
                   list(d["rewards"]), d["terminal"], d.get("start"))


def traces_to_jsonl(traces) -> str:
    return "".join(json.dumps(t.to_dict(), sort_keys=True) + "\n" for t in traces)


def _softmax(z):
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


def run_episode(net: Network, cfg: GridConfig, state: WorldState, obs: np.ndarray, rng,
                policy_mode: str = "argmax") -> EpisodeTrace:
    """Roll a policy out from a given state and first observation."""
    trace = EpisodeTrace(start={
        "agent": list(state.agent_cell), "target": list(state.target_cell),
        "obstacles": sorted(list(c) for c in state.obstacle_cells)})
    while state.terminal == "none":
        scores = forward(net, obs)
        if policy_mode == "argmax":
            action = argmax_action(scores)
        else:
            action = int(rng.choice(N_ACTIONS, p=_softmax(scores)))
        trace.observations.append(obs)
        trace.actions.append(action)
        state, obs, reward, _ = step(cfg, state, action, rng)
        trace.rewards.append(reward)
    trace.terminal = state.terminal
    return trace


def rollout(net: Network, cfg: GridConfig, n_episodes: int, rng,
            policy_mode: str = "argmax") -> list[EpisodeTrace]:
    if net.input_dim != OBS_DIM or net.output_dim != N_ACTIONS:
        raise ShapeError(f"Jumping World needs an {OBS_DIM}-input, {N_ACTIONS}-output network, got {net!r}")
    if policy_mode not in ("argmax", "softmax_sample"):
        raise ContractError(f"unknown policy mode {policy_mode!r}")
    rng = np.random.default_rng(rng)
    traces = []
    for _ in range(n_episodes):
        state, obs = reset(cfg, rng)
        traces.append(run_episode(net, cfg, state, obs, rng, policy_mode))
    return traces
