"""Randomized estimate of the Adversarial Rate via an assignment tree.

Each trial descends ``s`` levels: at every level the current box is cut in
two so that the sampled violating points are split as evenly as possible,
and one half is kept at random. The leaf's violating volume (relative to
the root) is counted exactly with the refinement verifier and scaled back
up by ``2**s``.
The reported statistic is the median over ``t`` independent trials.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AdvRateError, ContractError
from .intervals import Box
from .network import Network, forward
from .verifier import Property, VerifierConfig, adversarial_rate


@dataclass(frozen=True)
class CounterConfig:
    splits: int = 4
    trials: int = 15
    balance_samples: int = 256
    leaf_epsilon: float = 2.0 ** -8
    seed: int = 0
    leaf_max_boxes: int = 2 ** 20
    split_rule: str = "median"

    def __post_init__(self):
        if self.splits < 1 or self.trials < 1 or self.balance_samples < 1:
            raise ContractError("splits, trials and balance_samples must be positive")
        if not 0.0 < self.leaf_epsilon <= 1.0:
            raise ContractError("leaf_epsilon must lie in (0, 1]")
        if self.split_rule not in SPLIT_RULES:
            raise ContractError(f"split_rule must be one of {SPLIT_RULES}")

    def to_dict(self) -> dict:
        return dict(splits=self.splits, trials=self.trials, balance_samples=self.balance_samples,
                    leaf_epsilon=self.leaf_epsilon, seed=self.seed, leaf_max_boxes=self.leaf_max_boxes,
                    split_rule=self.split_rule)


@dataclass
class CountEstimate:
    median_rate: float
    trial_rates: np.ndarray
    mean_rate: float
    quantiles: tuple
    degraded: np.ndarray

    def to_dict(self) -> dict:
        return {
            "median_rate": self.median_rate,
            "mean_rate": self.mean_rate,
            "q25": self.quantiles[0],
            "q75": self.quantiles[1],
            "trial_rates": [float(r) for r in self.trial_rates],
            "degraded_trials": [int(i) for i in np.flatnonzero(self.degraded)],
        }


SPLIT_RULES = ("median", "midpoint")


def balanced_split(net: Network, post, box: Box, rng, n_samples: int, scale=None, rule: str = "midpoint"):
    """Pick the split that best balances sampled violations.

    One candidate per non-degenerate dimension, cut at the box midpoint
    (``rule="midpoint"``) or at the median coordinate of the violating
    samples (``rule="median"``). The candidate with the smallest
    ``|violating_left - violating_right|`` wins; ties go to the widest
    dimension (relative to ``scale`` when given), then the lowest index. With no violating samples every rule falls back to a
    widest-dimension midpoint split; when every sample violates, the median
    rule cuts at the midpoint too. Returns ``(dim, left, right)``.
    """
    if rule not in SPLIT_RULES:
        raise ContractError(f"unknown split rule {rule!r}")
    if not isinstance(post, Property):
        post = Property(box, post, "query")
    widths = box.widths
    candidates = np.flatnonzero(widths > 0)
    if candidates.size == 0:
        raise ContractError("cannot split a fully degenerate box")
    if scale is None:
        rel = widths
    else:
        scale = np.asarray(scale, dtype=np.float64)
        rel = np.where(scale > 0, widths / np.where(scale > 0, scale, 1.0), 0.0)

    pts = box.sample(n_samples, rng)
    bad = post.holds(forward(net, pts))
    cuts = box.center
    if bad.any():
        coords = pts[bad][:, candidates]
        if rule == "median" and not bad.all():
            lo, hi = box.lo[candidates], box.hi[candidates]
            # Keep the cut strictly inside so neither half is empty.
            margin = 1e-9 * (hi - lo)
            cuts = cuts.copy()
            cuts[candidates] = np.clip(np.median(coords, axis=0), lo + margin, hi - margin)
        left = (coords < cuts[candidates]).sum(axis=0)
        imbalance = np.abs(2 * left - int(bad.sum()))
    else:
        cuts = box.center
        imbalance = np.zeros(candidates.size, dtype=np.int64)
    # lexsort: last key is primary.
    order = np.lexsort((candidates, -rel[candidates], imbalance))
    dim = int(candidates[order[0]])
    lo_box, hi_box = box.split(dim, float(cuts[dim]))
    return dim, lo_box, hi_box


def estimate_rate(net: Network, prop: Property, cfg: CounterConfig | None = None) -> CountEstimate:
    cfg = cfg or CounterConfig()
    prop.validate(net)
    root = prop.pre
    scale = root.widths
    live = scale > 0
    if not live.any():
        raise ContractError("precondition has no non-degenerate dimension to split")
    leaf_cfg = VerifierConfig(epsilon=cfg.leaf_epsilon, max_boxes=cfg.leaf_max_boxes, max_counterexamples=0)
    rates = np.zeros(cfg.trials)
    degraded = np.zeros(cfg.trials, dtype=bool)

    for trial in range(cfg.trials):
        rng = np.random.default_rng([cfg.seed, trial])
        box = root
        for _ in range(cfg.splits):
            if not (box.widths > 0).any():
                break
            _, left, right = balanced_split(net, prop, box, rng, cfg.balance_samples, scale, cfg.split_rule)
            box = left if rng.random() < 0.5 else right
        report = adversarial_rate(net, prop.with_pre(box), leaf_cfg)
        degraded[trial] = not report.complete
        # Leaf volume relative to the root (2**-splits only for midpoint halving).
        leaf_fraction = float(np.prod(box.widths[live] / scale[live]))
        rates[trial] = report.adversarial_rate * leaf_fraction * 2.0 ** cfg.splits

    if degraded.all():
        raise AdvRateError("every trial exhausted the leaf verification budget")
    rates = np.clip(rates, 0.0, 1.0)
    q25, q75 = np.quantile(rates, [0.25, 0.75])
    return CountEstimate(float(np.median(rates)), rates, float(rates.mean()),
                         (float(q25), float(q75)), degraded)
