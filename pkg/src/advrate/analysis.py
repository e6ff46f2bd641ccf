"""Experiment harness: empirical vs. verification-driven safety metrics.

The heavy lifting is :func:`verify_family`, which runs the refinement
verifier over every property of a family once and, from the same stream of
resolved boxes, builds the per-cell heatmap and collects concrete
counterexamples. Per-cell values are the fraction of the cell's slice of
the precondition covered by violating (lower) or violating-or-unknown
(upper) boxes, so the cell mean reproduces the whole-domain rate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import AdvRateError, ConfigError, ShapeError
from .jumping_world import (MOVES, N_ACTIONS, OBS_DIM, GridConfig, WorldState, rollout,
                            run_episode)
from .network import Network, forward
from .properties import PropertyFamily, jumping_world_properties
from .trainer import TrainConfig, train
from .verifier import UNKNOWN, VIOLATING, VerifierConfig, adversarial_rate

log = logging.getLogger(__name__)


def binomial_se(p: float, n: int) -> float:
    return float(np.sqrt(p * (1.0 - p) / n)) if n > 0 else float("nan")


@dataclass
class ModelMetrics:
    success_rate: float
    collision_rate: float
    timeout_rate: float
    success_se: float
    collision_se: float
    timeout_se: float
    n_episodes: int
    adversarial_rate: float | None = None
    adversarial_rate_lower: float | None = None
    adv_collision_rate: float | None = None
    adv_collision_se: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def empirical_rates(net: Network, cfg: GridConfig, n_episodes: int, rng) -> ModelMetrics:
    """Argmax-policy rollouts from random resets; terminal-cause fractions."""
    traces = rollout(net, cfg, n_episodes, rng, "argmax")
    n = len(traces)
    counts = {k: sum(t.terminal == k for t in traces) for k in ("goal", "collision", "timeout")}
    s, c, t = (counts[k] / n for k in ("goal", "collision", "timeout"))
    return ModelMetrics(s, c, t, binomial_se(s, n), binomial_se(c, n), binomial_se(t, n), n)


def realize_counterexample(cfg: GridConfig, x, rng, delta: float = 0.0):
    """World state and first observation near an 8-feature counterexample.

    The agent sits in the cell nearest the observed position; obstacles are
    placed wherever a sensor bit is 1 and the neighbour is inside the grid;
    the target sits in the nearest cell to its observed coordinates; any
    remaining obstacles are scattered at random away from the pinned cells.
    The first observation is the counterexample with position and target
    coordinates jittered by up to ``delta`` (clipped to the agent's cell and
    the grid), and the exact sensor bits. Returns ``None`` when the sensor
    bits cannot be realized.
    """
    x = np.asarray(x, dtype=np.float64)
    w, h = cfg.width, cfg.height
    agent = (int(np.clip(np.floor(x[0] + 0.5), 0, w - 1)), int(np.clip(np.floor(x[1] + 0.5), 0, h - 1)))
    target = (int(np.clip(np.floor(x[6] + 0.5), 0, w - 1)), int(np.clip(np.floor(x[7] + 0.5), 0, h - 1)))
    if target == agent:
        return None
    bits = np.round(x[2:6]).astype(int)
    if not np.array_equal(bits, x[2:6]):
        return None
    obstacles, pinned = set(), {agent, target}
    for d, (dx, dy) in enumerate(MOVES):
        nxt = (agent[0] + dx, agent[1] + dy)
        inside = cfg.in_bounds(nxt)
        if bits[d] == 1 and inside:
            if nxt == target:
                return None
            obstacles.add(nxt)
        elif bits[d] == 0 and not inside:
            return None
        if inside:
            pinned.add(nxt)
    free = [(i, j) for j in range(h) for i in range(w) if (i, j) not in pinned]
    extra = max(0, cfg.n_obstacles - len(obstacles))
    if extra:
        picks = rng.choice(len(free), size=min(extra, len(free)), replace=False)
        obstacles.update(free[int(p)] for p in picks)
    state = WorldState(agent, target, frozenset(obstacles))

    obs = x.copy()
    if delta > 0:
        jitter = rng.uniform(-delta, delta, size=4)
        obs[0:2] += jitter[:2]
        obs[6:8] += jitter[2:]
    obs[0] = np.clip(obs[0], agent[0] - 0.5, agent[0] + 0.5)
    obs[1] = np.clip(obs[1], agent[1] - 0.5, agent[1] + 0.5)
    obs[6] = np.clip(obs[6], 0.0, w - 1.0)
    obs[7] = np.clip(obs[7], 0.0, h - 1.0)
    return state, obs


@dataclass
class AdvCollision:
    rate: float
    se: float
    n_episodes: int
    skipped: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def adv_collision_rate(net: Network, cfg: GridConfig, counterexamples, delta: float,
                       n_episodes: int, rng) -> AdvCollision:
    """Collision fraction of argmax rollouts started near verified counterexamples."""
    if net.input_dim != OBS_DIM or net.output_dim != N_ACTIONS:
        raise ShapeError(f"Jumping World needs an {OBS_DIM}-input, {N_ACTIONS}-output network")
    cexs = [np.asarray(c, dtype=np.float64) for c in counterexamples]
    if not cexs:
        raise AdvRateError("no counterexamples: adversarial collision rate is not applicable")
    rng = np.random.default_rng(rng)
    probe = np.random.default_rng(0)
    usable = [c for c in cexs if c.shape == (OBS_DIM,) and realize_counterexample(cfg, c, probe) is not None]
    skipped = len(cexs) - len(usable)
    if not usable:
        raise AdvRateError(f"none of the {len(cexs)} counterexamples can be realized as a world state")
    collisions = 0
    for _ in range(n_episodes):
        x = usable[int(rng.integers(len(usable)))]
        state, obs = realize_counterexample(cfg, x, rng, delta)
        trace = run_episode(net, cfg, state, obs, rng, "argmax")
        collisions += trace.terminal == "collision"
    rate = collisions / n_episodes
    return AdvCollision(rate, binomial_se(rate, n_episodes), n_episodes, skipped)


def cross_seed_adv_rate(net_b: Network, counterexamples_of_a, cfg: GridConfig, delta: float,
                        n_episodes: int, rng) -> AdvCollision:
    """Model B evaluated near model A's counterexamples."""
    return adv_collision_rate(net_b, cfg, counterexamples_of_a, delta, n_episodes, rng)


@dataclass
class Heatmap:
    upper: np.ndarray  # [x, y] per-cell family-mean rate_upper
    lower: np.ndarray
    model_id: str = ""
    family_id: str = ""
    flagged: np.ndarray | None = None  # cells touched by a budget-exhausted property

    @property
    def shape(self):
        return self.upper.shape

    def rows(self):
        w, h = self.upper.shape
        for y in range(h):
            for x in range(w):
                flag = bool(self.flagged[x, y]) if self.flagged is not None else False
                yield x, y, float(self.upper[x, y]), float(self.lower[x, y]), int(flag)

    def l1(self, other: "Heatmap") -> float:
        return float(np.abs(self.upper - other.upper).sum())


HEATMAP_HEADER = ["x", "y", "rate_upper", "rate_lower", "budget_flag"]


class _CellAccumulator:
    """Spreads resolved-box volume over grid cells along two position dims."""

    def __init__(self, cfg: GridConfig, dims=(0, 1)):
        self.cfg = cfg
        self.dims = dims
        self.upper = np.zeros((cfg.width, cfg.height))
        self.lower = np.zeros((cfg.width, cfg.height))

    @staticmethod
    def _fractions(lo, hi, n):
        edges_lo = np.arange(n) - 0.5
        edges_hi = edges_lo + 1.0
        width = hi - lo
        overlap = np.clip(np.minimum(hi[:, None], edges_hi) - np.maximum(lo[:, None], edges_lo), 0.0, None)
        frac = np.divide(overlap, width[:, None], out=np.zeros_like(overlap), where=width[:, None] > 0)
        point = width == 0
        if point.any():
            idx = np.clip(np.floor(lo[point] + 0.5).astype(int), 0, n - 1)
            frac[point] = 0.0
            frac[point, idx] = 1.0
        return frac

    def __call__(self, lo, hi, vol, labels):
        bad = labels != 0
        if not bad.any():
            return
        lo, hi, vol, labels = lo[bad], hi[bad], vol[bad], labels[bad]
        dx, dy = self.dims
        fx = self._fractions(lo[:, dx], hi[:, dx], self.cfg.width)
        fy = self._fractions(lo[:, dy], hi[:, dy], self.cfg.height)
        self.upper += np.einsum("n,nw,nh->wh", vol, fx, fy)
        v = labels == VIOLATING
        if v.any():
            self.lower += np.einsum("n,nw,nh->wh", vol[v], fx[v], fy[v])


class _UnknownWitnesses:
    """Concrete counterexamples found at the centres of unresolved boxes."""

    def __init__(self, net, prop, k):
        self.net, self.prop, self.k = net, prop, k
        self.found = []

    def __call__(self, lo, hi, vol, labels):
        if len(self.found) >= self.k:
            return
        unk = labels == UNKNOWN
        if not unk.any():
            return
        order = np.argsort(-vol[unk], kind="stable")
        centers = (0.5 * (lo[unk] + hi[unk]))[order]
        hits = centers[self.prop.holds(forward(self.net, centers))]
        self.found.extend(hits[: self.k - len(self.found)])


@dataclass
class FamilyResult:
    family_id: str
    rates_upper: np.ndarray
    rates_lower: np.ndarray
    complete: np.ndarray
    property_names: list
    counterexamples: list  # concrete 8-vectors, violating-box centres first
    heatmap: Heatmap | None = None
    boxes_processed: int = 0

    @property
    def rate_upper(self) -> float:
        return float(np.mean(self.rates_upper))

    @property
    def rate_lower(self) -> float:
        return float(np.mean(self.rates_lower))

    @property
    def adversarial_rate(self) -> float:
        return self.rate_upper

    def to_dict(self, with_heatmap: bool = True) -> dict:
        d = {
            "family": self.family_id,
            "rate_upper": self.rate_upper,
            "rate_lower": self.rate_lower,
            "adversarial_rate": self.adversarial_rate,
            "boxes_processed": self.boxes_processed,
            "properties": [
                {"name": n, "rate_upper": float(u), "rate_lower": float(l), "complete": bool(c)}
                for n, u, l, c in zip(self.property_names, self.rates_upper, self.rates_lower, self.complete)
            ],
            "counterexamples": [[float(v) for v in x] for x in self.counterexamples],
        }
        if with_heatmap and self.heatmap is not None:
            d["heatmap_upper"] = self.heatmap.upper.tolist()
            d["heatmap_lower"] = self.heatmap.lower.tolist()
        return d


def verify_family(net: Network, family: PropertyFamily, vcfg: VerifierConfig | None = None,
                  grid: GridConfig | None = None, per_property_witnesses: int = 8,
                  model_id: str = "") -> FamilyResult:
    """Adversarial rate of every property, the family mean, and optionally a heatmap."""
    vcfg = vcfg or VerifierConfig(epsilon=2.0 ** -6)
    family.validate(net)
    acc = _CellAccumulator(grid) if grid is not None else None
    flagged = np.zeros((grid.width, grid.height), dtype=bool) if grid is not None else None
    ups, lows, complete, cexs = [], [], [], []
    processed = 0
    for prop in family:
        if acc is not None:
            # Each property's volume is normalized by its own precondition; cell
            # shares are recovered below by dividing by the cell's area fraction.
            prop_acc = _CellAccumulator(grid)
        witnesses = _UnknownWitnesses(net, prop, per_property_witnesses)

        def hook(lo, hi, vol, labels, _acc=prop_acc if acc is not None else None, _w=witnesses):
            if _acc is not None:
                _acc(lo, hi, vol, labels)
            _w(lo, hi, vol, labels)

        report = adversarial_rate(net, prop, vcfg, on_resolved=hook)
        processed += report.boxes_processed
        ups.append(report.rate_upper)
        lows.append(report.rate_lower)
        complete.append(report.complete)
        if not report.complete:
            log.warning("%s: verification budget exhausted, unknown volume %.4f", prop.name, report.unknown_volume)
        cexs.extend(report.counterexamples[:per_property_witnesses])
        cexs.extend(witnesses.found)
        if acc is not None:
            acc.upper += prop_acc.upper
            acc.lower += prop_acc.lower
            if not report.complete:
                flagged |= prop_acc.upper > prop_acc.lower

    heatmap = None
    if acc is not None:
        n_cells = grid.width * grid.height
        scale = n_cells / len(family)
        heatmap = Heatmap(acc.upper * scale, acc.lower * scale, model_id, family.name, flagged)
    return FamilyResult(family.name, np.array(ups), np.array(lows), np.array(complete),
                        [p.name for p in family], cexs, heatmap, processed)


def spatial_heatmap(net: Network, cfg: GridConfig, family: PropertyFamily | None = None,
                    verifier_cfg: VerifierConfig | None = None, model_id: str = "") -> Heatmap:
    family = family or jumping_world_properties(cfg)
    return verify_family(net, family, verifier_cfg, cfg, model_id=model_id).heatmap


@dataclass
class TemporalPoint:
    episode_index: int
    rate_upper: float
    rate_lower: float
    heatmap: Heatmap


def temporal_sweep(checkpoints, family: PropertyFamily, verifier_cfg: VerifierConfig | None,
                   cfg: GridConfig) -> tuple[list, list]:
    """Rates and heatmaps per checkpoint, plus L1 drift between consecutive heatmaps."""
    if len(checkpoints) < 2:
        raise ConfigError("temporal sweep needs at least two checkpoints")
    points = []
    for ck in checkpoints:
        res = verify_family(ck.net, family, verifier_cfg, cfg, model_id=f"ep{ck.episode_index}")
        points.append(TemporalPoint(ck.episode_index, res.rate_upper, res.rate_lower, res.heatmap))
    drift = [a.heatmap.l1(b.heatmap) for a, b in zip(points[:-1], points[1:])]
    return points, drift


@dataclass
class SweepRow:
    hidden_sizes: tuple
    activation: str
    n_trained: int
    n_qualified: int
    mean_rate: float | None
    std_rate: float | None
    rates: list = field(default_factory=list)
    success_rates: list = field(default_factory=list)

    @property
    def label(self) -> str:
        return f"{len(self.hidden_sizes)}x{self.hidden_sizes[0]}" if len(set(self.hidden_sizes)) == 1 else \
            "-".join(map(str, self.hidden_sizes))

    def csv_row(self):
        return [self.label, self.activation, self.n_trained, self.n_qualified,
                "" if self.mean_rate is None else self.mean_rate,
                "" if self.std_rate is None else self.std_rate]


SWEEP_HEADER = ["architecture", "activation", "n_trained", "n_qualified", "mean_rate", "std_rate"]


def architecture_sweep(hidden_sizes_list, activations, seeds, train_cfg: TrainConfig,
                       family: PropertyFamily | None = None, verifier_cfg: VerifierConfig | None = None,
                       eval_episodes: int = 500, success_cutoff: float = 0.90,
                       eval_seed: int = 12345, networks=None) -> list[SweepRow]:
    """Train (or take from ``networks[(sizes, act, seed)]``), filter by success, verify, aggregate.

    Cells with no model above the cutoff get ``mean_rate=None``.
    """
    family = family or jumping_world_properties(train_cfg.grid)
    rows = []
    for sizes in hidden_sizes_list:
        for act in activations:
            rates, successes = [], []
            for seed in seeds:
                key = (tuple(sizes), act, seed)
                if networks is not None and key in networks:
                    net = networks[key]
                else:
                    cfg = TrainConfig(**{**train_cfg.__dict__, "hidden_sizes": tuple(sizes),
                                         "activation": act, "seed": seed})
                    net = train(cfg)[-1].net
                m = empirical_rates(net, train_cfg.grid, eval_episodes, np.random.default_rng(eval_seed))
                successes.append(m.success_rate)
                if m.success_rate >= success_cutoff:
                    rates.append(verify_family(net, family, verifier_cfg).rate_upper)
            mean = float(np.mean(rates)) if rates else None
            std = float(np.std(rates)) if rates else None
            rows.append(SweepRow(tuple(sizes), act, len(seeds), len(rates), mean, std, rates, successes))
    return rows
