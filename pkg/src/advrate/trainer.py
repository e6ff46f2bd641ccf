"""REINFORCE-with-baseline trainer for Jumping World policies.

Gradients are computed by hand for the dense networks in ``network``; the
policy is a softmax over the raw output scores, which only exists here.
The verified network itself stays linear at the output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .jumping_world import GridConfig, N_ACTIONS, OBS_DIM, EpisodeTrace, reset, run_episode
from .network import Activation, Layer, Network, init_network

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 20000
    learning_rate: float = 2e-3
    gamma: float = 0.99
    hidden_sizes: tuple = (32, 32)
    activation: str = "relu"
    seed: int = 0
    checkpoint_every: int = 1000
    entropy_bonus: float = 0.001
    baseline_decay: float = 0.99
    batch_episodes: int = 8
    lr_final_fraction: float = 0.1
    grad_clip: float = 1.0
    grid: GridConfig = field(default_factory=GridConfig)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if any(h <= 0 for h in self.hidden_sizes):
            raise ConfigError("hidden sizes must be positive")
        if self.episodes < 1 or self.checkpoint_every < 1 or self.batch_episodes < 1:
            raise ConfigError("episodes, checkpoint_every and batch_episodes must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        Activation.parse(self.activation)
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "episodes", "learning_rate", "gamma", "activation", "seed", "checkpoint_every",
            "entropy_bonus", "baseline_decay", "batch_episodes", "lr_final_fraction", "grad_clip")}
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["grid"] = self.grid.to_dict()
        return d


@dataclass
class Checkpoint:
    net: Network
    episode_index: int
    running_success_rate: float
    seed: int

    def metadata(self) -> dict:
        return {"episode_index": self.episode_index,
                "running_success_rate": self.running_success_rate, "seed": self.seed}


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    out = np.empty(len(rewards))
    g = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def policy_gradient(net: Network, observations, actions, advantages, entropy_bonus: float = 0.0):
    """Gradient of ``sum_t A_t log pi(a_t|s_t) + beta * sum_t H(pi(.|s_t))``.

    Returns a list of ``(dW, db)`` pairs, one per layer.
    """
    x = np.asarray(observations, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    adv = np.asarray(advantages, dtype=np.float64)
    pres, posts = [], [x]
    a = x
    for layer in net.layers:
        z = a @ layer.weights.T + layer.bias
        a = layer.activation(z)
        pres.append(z)
        posts.append(a)
    p = softmax_rows(posts[-1])
    onehot = np.zeros_like(p)
    onehot[np.arange(len(actions)), actions] = 1.0
    delta = adv[:, None] * (onehot - p)
    if entropy_bonus:
        logp = np.log(np.clip(p, 1e-300, None))
        ent = -(p * logp).sum(axis=1, keepdims=True)
        delta -= entropy_bonus * p * (logp + ent)
    grads = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if i < len(net.layers) - 1:
            delta = delta * layer.activation.derivative(pres[i], posts[i + 1])
        grads.append((delta.T @ posts[i], delta.sum(axis=0)))
        delta = delta @ layer.weights
    grads.reverse()
    for dw, db in grads:
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise NumericError("non-finite policy gradient")
    return grads


def apply_update(net: Network, steps) -> Network:
    """New network with ``W + dW`` for each ``(dW, db)`` in ``steps``."""
    return Network([Layer(layer.weights + dw, layer.bias + db, layer.activation)
                    for layer, (dw, db) in zip(net.layers, steps)], net.input_dim)


def policy_gradient_step(net: Network, trace: EpisodeTrace, gamma: float, baseline,
                         lr: float, entropy_bonus: float = 0.0) -> Network:
    """One plain gradient-ascent step on a single episode."""
    if len(trace) == 0:
        raise ContractError("empty trace")
    returns = discounted_returns(trace.rewards, gamma)
    adv = returns - np.broadcast_to(np.asarray(baseline, dtype=np.float64), returns.shape)
    grads = policy_gradient(net, trace.observations, trace.actions, adv, entropy_bonus)
    return apply_update(net, [(lr * dw, lr * db) for dw, db in grads])


class _Adam:
    def __init__(self, shapes, b1=0.9, b2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def steps(self, grads, lr):
        self.t += 1
        out = []
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for i, g in enumerate(grads):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            out.append(lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


def initial_network(cfg: TrainConfig) -> Network:
    """The untrained network ``train(cfg)`` starts from."""
    rng = np.random.default_rng([cfg.seed, 0])
    return init_network(OBS_DIM, cfg.hidden_sizes, N_ACTIONS, cfg.activation, rng)


def train(cfg: TrainConfig, progress=None) -> list[Checkpoint]:
    """Train a softmax policy; checkpoints every ``checkpoint_every`` episodes and at the end.

    Updates use Adam (ascent) on the batched REINFORCE gradient with a
    moving-average return baseline, global-norm clipping and a linear
    learning-rate decay. Fully determined by ``cfg.seed``.
    """
    env_rng = np.random.default_rng([cfg.seed, 1])
    net = initial_network(cfg)
    shapes = [s for layer in net.layers for s in (layer.weights.shape, layer.bias.shape)]
    opt = _Adam(shapes)
    baseline = 0.0
    baseline_ready = False
    recent = []
    checkpoints = []
    batch_obs, batch_act, batch_adv = [], [], []

    for ep in range(1, cfg.episodes + 1):
        state, obs = reset(cfg.grid, env_rng)
        trace = run_episode(net, cfg.grid, state, obs, env_rng, "softmax_sample")
        returns = discounted_returns(trace.rewards, cfg.gamma)
        if not baseline_ready:
            baseline, baseline_ready = float(returns.mean()), True
        batch_obs.extend(trace.observations)
        batch_act.extend(trace.actions)
        batch_adv.append(returns - baseline)
        baseline = cfg.baseline_decay * baseline + (1 - cfg.baseline_decay) * float(returns.mean())
        recent.append(trace.terminal == "goal")
        if len(recent) > 500:
            recent.pop(0)

        if ep % cfg.batch_episodes == 0 or ep == cfg.episodes:
            adv = np.concatenate(batch_adv) / len(batch_adv)
            grads = policy_gradient(net, np.array(batch_obs), batch_act, adv, cfg.entropy_bonus / len(batch_adv))
            flat = [g for pair in grads for g in pair]
            if not all(np.all(np.isfinite(g)) for g in flat):
                raise NumericError(f"non-finite gradient at episode {ep}")
            if cfg.learning_rate > 0:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in flat))
                if cfg.grad_clip > 0 and norm > cfg.grad_clip:
                    flat = [g * (cfg.grad_clip / norm) for g in flat]
                frac = (ep - 1) / max(1, cfg.episodes - 1)
                lr = cfg.learning_rate * (1.0 - (1.0 - cfg.lr_final_fraction) * frac)
                upd = opt.steps(flat, lr)
                net = apply_update(net, list(zip(upd[0::2], upd[1::2])))
            batch_obs, batch_act, batch_adv = [], [], []

        if ep % cfg.checkpoint_every == 0 or ep == cfg.episodes:
            rate = float(np.mean(recent))
            checkpoints.append(Checkpoint(net, ep, rate, cfg.seed))
            log.info("seed %d episode %d running success %.3f", cfg.seed, ep, rate)
            if progress is not None:
                progress(checkpoints[-1])
    return checkpoints
