"""Command-line entry point: ``advrate <command> ...``.

Every command takes ``--seed``, writes one machine-readable result file
(flags, their hash and the result; no timestamps) and prints a short human
summary. ``verify`` exits 0 when every property is UNSAT, 1 when any is
SAT, 2 when some are UNKNOWN and none SAT; any error exits 3.

Environment overrides for defaults: ``ADVRATE_EPSILON``,
``ADVRATE_MAX_BOXES`` and ``ADVRATE_OUT_DIR``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .counting import CounterConfig, estimate_rate
from .errors import AdvRateError
from .io import (config_hash, family_to_dict, load_network, save_network, write_csv, write_json,
                 write_result)
from .jumping_world import GridConfig
from .properties import jumping_world_properties, load_properties
from .trainer import Checkpoint, TrainConfig, initial_network, train
from .verifier import VerifierConfig, adversarial_rate, decide

EXIT_UNSAT, EXIT_SAT, EXIT_UNKNOWN, EXIT_ERROR = 0, 1, 2, 3
_NOT_HASHED = {"out", "csv", "out_dir", "func", "verbose"}

log = logging.getLogger("advrate")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _env_float(name, default):
    v = os.environ.get(name)
    return float(v) if v else default


def _env_int(name, default):
    v = os.environ.get(name)
    return int(v) if v else default


def _int_list(text):
    return [int(t) for t in text.split(",") if t]


def _sizes(text):
    """``2x32`` -> (32, 32); ``64-32`` -> (64, 32)."""
    if "x" in text:
        depth, width = text.split("x")
        return (int(width),) * int(depth)
    return tuple(int(t) for t in text.split("-"))


def _sizes_list(text):
    return [_sizes(t) for t in text.split(",") if t]


def _config(args) -> dict:
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in _NOT_HASHED:
            continue
        if isinstance(v, tuple):
            v = list(v)
        if isinstance(v, list):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        cfg[k] = v
    return cfg


def _out_path(args, model_id: str) -> Path:
    if args.out:
        return Path(args.out)
    out_dir = Path(os.environ.get("ADVRATE_OUT_DIR", "."))
    return out_dir / f"{args.command}_{model_id}_s{args.seed}_{config_hash(_config(args))}.json"


def _model_id(path) -> str:
    return Path(path).stem


def _vcfg(args) -> VerifierConfig:
    return VerifierConfig(epsilon=args.epsilon, max_boxes=args.max_boxes, workers=args.workers)


def _grid(args) -> GridConfig:
    return GridConfig(width=args.width, height=args.height, n_obstacles=args.obstacles,
                      max_steps=args.max_steps, seed=args.seed)


def _family(args, grid, net=None):
    if getattr(args, "props", None):
        return load_properties(args.props, net)
    return jumping_world_properties(grid)


def _finish(args, model_id, result) -> Path:
    path = _out_path(args, model_id)
    write_result(path, args.command, _config(args), result)
    print(f"result written to {path}")
    return path


# commands


def cmd_verify(args) -> int:
    net = load_network(args.network)
    family = load_properties(args.properties, net)
    vcfg = VerifierConfig(epsilon=args.epsilon, max_boxes=args.max_boxes, workers=args.workers,
                          keep_boxes=args.include_boxes)
    entries, statuses = [], []
    for prop in family:
        dec = decide(net, prop, vcfg)
        rep = adversarial_rate(net, prop, vcfg)
        statuses.append(dec.status)
        entries.append({"decision": dec.to_dict(), "report": rep.to_dict(args.include_boxes)})
        extra = "" if dec.witness is None else f" witness={[float(v) for v in dec.witness]}"
        print(f"{prop.name}: {dec.status} rate in [{rep.rate_lower:.6f}, {rep.rate_upper:.6f}]{extra}")
    _finish(args, _model_id(args.network), {"properties": entries, "statuses": statuses})
    if "SAT" in statuses:
        return EXIT_SAT
    if all(s == "UNSAT" for s in statuses):
        return EXIT_UNSAT
    return EXIT_UNKNOWN


def cmd_rate(args) -> int:
    net = load_network(args.network)
    family = load_properties(args.properties, net)
    vcfg = _vcfg(args)
    reports = [adversarial_rate(net, p, vcfg) for p in family]
    for r in reports:
        flag = "" if r.complete else " (budget exhausted)"
        print(f"{r.name}: adversarial_rate={r.adversarial_rate:.6f} "
              f"[{r.rate_lower:.6f}, {r.rate_upper:.6f}]{flag}")
    mean = float(np.mean([r.adversarial_rate for r in reports]))
    print(f"family mean adversarial_rate={mean:.6f}")
    _finish(args, _model_id(args.network),
            {"properties": [r.to_dict() for r in reports], "mean_adversarial_rate": mean})
    return 0


def cmd_count(args) -> int:
    net = load_network(args.network)
    family = load_properties(args.properties, net)
    ccfg = CounterConfig(splits=args.splits, trials=args.trials, balance_samples=args.balance_samples,
                         leaf_epsilon=args.leaf_epsilon, seed=args.seed, leaf_max_boxes=args.max_boxes)
    out = []
    for prop in family:
        est = estimate_rate(net, prop, ccfg)
        print(f"{prop.name}: median estimate {est.median_rate:.6f} "
              f"(IQR {est.quantiles[0]:.6f}..{est.quantiles[1]:.6f}, {args.trials} trials)")
        out.append({"name": prop.name, **est.to_dict()})
    _finish(args, _model_id(args.network), {"properties": out})
    return 0


def cmd_train(args) -> int:
    grid = _grid(args)
    tcfg = TrainConfig(episodes=args.episodes, learning_rate=args.lr, gamma=args.gamma,
                       hidden_sizes=args.hidden, activation=args.activation, seed=args.seed,
                       checkpoint_every=args.checkpoint_every, entropy_bonus=args.entropy_bonus,
                       batch_episodes=args.batch_episodes, grid=grid)
    model_id = f"{len(tcfg.hidden_sizes)}x{tcfg.hidden_sizes[0]}_{tcfg.activation}_s{args.seed}"
    out_dir = Path(args.out_dir or os.environ.get("ADVRATE_OUT_DIR", "."))
    files = []

    def save(net, episode, meta):
        path = out_dir / f"{model_id}_ep{episode}.json"
        save_network(net, path)
        write_json(path.with_suffix(".meta.json"), {"model_id": model_id, "train_config": tcfg.to_dict(),
                                                    "config_hash": config_hash(tcfg.to_dict()), **meta})
        files.append(str(path.name))

    save(initial_network(tcfg), 0, {"episode_index": 0, "running_success_rate": None, "seed": args.seed})
    checkpoints = train(tcfg, progress=lambda ck: save(ck.net, ck.episode_index, ck.metadata()))
    last = checkpoints[-1]
    print(f"trained {model_id}: {last.episode_index} episodes, "
          f"running success rate {last.running_success_rate:.3f}; {len(files)} files in {out_dir}")
    _finish(args, model_id, {"model_id": model_id, "checkpoints": files,
                             "checkpoint_success": [ck.running_success_rate for ck in checkpoints]})
    return 0


def cmd_eval(args) -> int:
    net = load_network(args.network)
    grid = _grid(args)
    m = analysis.empirical_rates(net, grid, args.episodes, np.random.default_rng([args.seed, 0]))
    result = {"metrics": None}
    if args.verify:
        family = _family(args, grid, net)
        res = analysis.verify_family(net, family, _vcfg(args))
        m.adversarial_rate, m.adversarial_rate_lower = res.rate_upper, res.rate_lower
        result["family"] = res.to_dict(with_heatmap=False)
        if res.counterexamples:
            adv = analysis.adv_collision_rate(net, grid, res.counterexamples, args.delta, args.episodes,
                                              np.random.default_rng([args.seed, 1]))
            m.adv_collision_rate, m.adv_collision_se = adv.rate, adv.se
            result["adv_collision"] = adv.to_dict()
        else:
            result["adv_collision"] = "not applicable: no counterexamples"
    result["metrics"] = m.to_dict()
    print(f"success {m.success_rate:.3f}±{m.success_se:.3f}  collision {m.collision_rate:.3f}±{m.collision_se:.3f}"
          f"  timeout {m.timeout_rate:.3f}±{m.timeout_se:.3f}  ({m.n_episodes} episodes)")
    if m.adversarial_rate is not None:
        print(f"adversarial rate {m.adversarial_rate:.4f} (lower {m.adversarial_rate_lower:.4f})")
    if m.adv_collision_rate is not None:
        print(f"adv. collision rate {m.adv_collision_rate:.3f}±{m.adv_collision_se:.3f}")
    _finish(args, _model_id(args.network), result)
    return 0


def cmd_heatmap(args) -> int:
    net = load_network(args.network)
    grid = _grid(args)
    family = _family(args, grid, net)
    model_id = _model_id(args.network)
    res = analysis.verify_family(net, family, _vcfg(args), grid, model_id=model_id)
    hm = res.heatmap
    if args.csv:
        write_csv(args.csv, analysis.HEATMAP_HEADER, hm.rows())
    for y in range(grid.height - 1, -1, -1):
        print(" ".join(f"{hm.upper[x, y]:.2f}" for x in range(grid.width)))
    print(f"family rate {res.rate_upper:.6f} (lower {res.rate_lower:.6f}), cell mean {hm.upper.mean():.6f}")
    _finish(args, model_id, res.to_dict())
    return 0


def cmd_temporal(args) -> int:
    grid = _grid(args)
    nets = [load_network(p) for p in args.checkpoints]
    family = _family(args, grid, nets[0])
    cks = [Checkpoint(net, i, None, args.seed) for i, net in enumerate(nets)]
    points, drift = analysis.temporal_sweep(cks, family, _vcfg(args), grid)
    rows = []
    for path, pt in zip(args.checkpoints, points):
        print(f"{Path(path).name}: rate {pt.rate_upper:.6f} (lower {pt.rate_lower:.6f})")
        rows.append([Path(path).name, pt.rate_upper, pt.rate_lower])
    print("heatmap L1 drift: " + ", ".join(f"{d:.4f}" for d in drift))
    if args.csv:
        write_csv(args.csv, ["checkpoint", "rate_upper", "rate_lower"], rows)
    _finish(args, _model_id(args.checkpoints[-1]), {
        "checkpoints": [{"file": r[0], "rate_upper": r[1], "rate_lower": r[2],
                         "heatmap_upper": pt.heatmap.upper.tolist()} for r, pt in zip(rows, points)],
        "drift_l1": drift})
    return 0


def cmd_sweep(args) -> int:
    grid = _grid(args)
    base = TrainConfig(episodes=args.episodes, learning_rate=args.lr, grid=grid,
                       entropy_bonus=args.entropy_bonus)
    family = jumping_world_properties(grid)
    rows = analysis.architecture_sweep(args.sizes, args.activations, args.seeds, base, family, _vcfg(args),
                                       args.eval_episodes, args.cutoff, eval_seed=args.seed)
    for r in rows:
        rate = "missing" if r.mean_rate is None else f"{r.mean_rate:.4f} ± {r.std_rate:.4f}"
        print(f"{r.label:>8} {r.activation:<10} qualified {r.n_qualified}/{r.n_trained}  rate {rate}")
    if args.csv:
        write_csv(args.csv, analysis.SWEEP_HEADER, [r.csv_row() for r in rows])
    _finish(args, "sweep", [{"architecture": r.label, "activation": r.activation, "n_trained": r.n_trained,
                             "n_qualified": r.n_qualified, "mean_rate": r.mean_rate, "std_rate": r.std_rate,
                             "rates": r.rates, "success_rates": r.success_rates} for r in rows])
    return 0


def cmd_cross_seed(args) -> int:
    grid = _grid(args)
    net_a, net_b = load_network(args.network_a), load_network(args.network_b)
    family = _family(args, grid, net_a)
    res = analysis.verify_family(net_a, family, _vcfg(args))
    if not res.counterexamples:
        raise AdvRateError("model A has no counterexamples; cross-seed rate is not applicable")
    self_rate = analysis.adv_collision_rate(net_a, grid, res.counterexamples, args.delta, args.episodes,
                                            np.random.default_rng([args.seed, 1]))
    cross = analysis.cross_seed_adv_rate(net_b, res.counterexamples, grid, args.delta, args.episodes,
                                         np.random.default_rng([args.seed, 1]))
    print(f"A near A's counterexamples: {self_rate.rate:.3f}±{self_rate.se:.3f}")
    print(f"B near A's counterexamples: {cross.rate:.3f}±{cross.se:.3f}")
    _finish(args, f"{_model_id(args.network_a)}_vs_{_model_id(args.network_b)}",
            {"self": self_rate.to_dict(), "cross": cross.to_dict(),
             "n_counterexamples": len(res.counterexamples), "rate_upper_a": res.rate_upper})
    return 0


def cmd_properties(args) -> int:
    grid = _grid(args)
    family = jumping_world_properties(grid)
    write_json(args.out or f"properties_{grid.width}x{grid.height}.json", family_to_dict(family))
    print(f"{len(family)} properties written")
    return 0


# parser


def _add_common(p, verifier=True, grid=False):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="result file (default: named after command, model, seed and config hash)")
    if verifier:
        p.add_argument("--epsilon", type=float, default=_env_float("ADVRATE_EPSILON", 2.0 ** -8))
        p.add_argument("--max-boxes", type=int, default=_env_int("ADVRATE_MAX_BOXES", 2 ** 22))
        p.add_argument("--workers", type=int, default=1)
    if grid:
        g = GridConfig()
        p.add_argument("--width", type=int, default=g.width)
        p.add_argument("--height", type=int, default=g.height)
        p.add_argument("--obstacles", type=int, default=g.n_obstacles)
        p.add_argument("--max-steps", type=int, default=g.max_steps)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="advrate", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("verify", help="decide each property and measure its violating volume")
    p.add_argument("network")
    p.add_argument("properties")
    p.add_argument("--include-boxes", action="store_true", help="write every violating/unknown box")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("rate", help="adversarial rate per property")
    p.add_argument("network")
    p.add_argument("properties")
    _add_common(p)
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("count", help="randomized rate estimate")
    p.add_argument("network")
    p.add_argument("properties")
    p.add_argument("--splits", type=int, default=4)
    p.add_argument("--trials", type=int, default=15)
    p.add_argument("--balance-samples", type=int, default=256)
    p.add_argument("--leaf-epsilon", type=float, default=_env_float("ADVRATE_EPSILON", 2.0 ** -8))
    p.add_argument("--max-boxes", type=int, default=_env_int("ADVRATE_MAX_BOXES", 2 ** 20))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("train", help="train a Jumping World policy")
    t = TrainConfig()
    p.add_argument("--episodes", type=int, default=t.episodes)
    p.add_argument("--lr", type=float, default=t.learning_rate)
    p.add_argument("--gamma", type=float, default=t.gamma)
    p.add_argument("--hidden", type=_sizes, default=t.hidden_sizes, help="e.g. 2x32 or 64-32")
    p.add_argument("--activation", default=t.activation)
    p.add_argument("--checkpoint-every", type=int, default=t.checkpoint_every)
    p.add_argument("--entropy-bonus", type=float, default=t.entropy_bonus)
    p.add_argument("--batch-episodes", type=int, default=t.batch_episodes)
    p.add_argument("--out-dir", help="checkpoint directory")
    _add_common(p, verifier=False, grid=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="success/collision/timeout rates, optionally with verification")
    p.add_argument("network")
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--verify", action="store_true", help="also compute adversarial and adv. collision rates")
    p.add_argument("--props", help="property file (default: generated Jumping World family)")
    p.add_argument("--delta", type=float, default=0.25)
    _add_common(p, grid=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="per-cell adversarial rate")
    p.add_argument("network")
    p.add_argument("--props")
    p.add_argument("--csv")
    _add_common(p, grid=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("temporal", help="rates and heatmaps across checkpoints")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--props")
    p.add_argument("--csv")
    _add_common(p, grid=True)
    p.set_defaults(func=cmd_temporal)

    p = sub.add_parser("sweep", help="architecture/activation sweep")
    p.add_argument("--sizes", type=_sizes_list, default=[(8, 8), (32, 32)])
    p.add_argument("--activations", type=lambda s: s.split(","), default=["relu"])
    p.add_argument("--seeds", type=_int_list, default=[0, 1])
    p.add_argument("--episodes", type=int, default=TrainConfig().episodes)
    p.add_argument("--lr", type=float, default=TrainConfig().learning_rate)
    p.add_argument("--entropy-bonus", type=float, default=TrainConfig().entropy_bonus)
    p.add_argument("--eval-episodes", type=int, default=500)
    p.add_argument("--cutoff", type=float, default=0.90)
    p.add_argument("--csv")
    _add_common(p, grid=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cross-seed", help="model B evaluated near model A's counterexamples")
    p.add_argument("network_a")
    p.add_argument("network_b")
    p.add_argument("--props")
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--delta", type=float, default=0.25)
    _add_common(p, grid=True)
    p.set_defaults(func=cmd_cross_seed)

    p = sub.add_parser("properties", help="write the Jumping World property family")
    _add_common(p, verifier=False, grid=True)
    p.set_defaults(func=cmd_properties)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (AdvRateError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
