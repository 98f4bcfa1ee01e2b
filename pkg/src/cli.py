"""Command-line entry point.

Subcommands:
    verify-theorem   exact hypothesis-class checks (optionally fuzzed), or
                     the optimal Q of one plain-text MDP
    run              seeds of one online experiment
    grid-search      step-size / temperature search on the tuning instance
    offline          the offline maze coverage suite
    probe            smoothing | frozen | cells diagnostics

Values come from defaults, then an optional `--config` file, then flags.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from src import harness, hypothesis_lab, illustrative_maze, probes
from src.agents import SimpleDynamicsModel
from src.config import AGENT_KINDS, ENV_NAMES, REGIMES, ConfigError, ExperimentConfig, GridSpec, load_config_file
from src.exact_mdp import MDPError, greedy_actions, load_mdp_file, solve_optimal_q
from src.illustrative_maze import CoverageLevel
from src.tensor_nn import load_checkpoint, save_checkpoint
from src.training import train_online

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

# CLI flag -> ExperimentConfig field
EXPERIMENT_FLAGS = {
    "env": "env",
    "size": "size",
    "agent": "agent_kind",
    "regime": "regime",
    "rollout_length": "rollout_length",
    "q_step_size": "q_step_size",
    "temperature": "temperature",
    "seeds": "seeds",
    "base_seed": "base_seed",
    "disable_spontaneous": "disable_spontaneous",
    "eval_interval": "eval_interval",
    "eval_episodes": "eval_episodes",
    "eval_steps": "eval_steps",
    "scale": "scale",
    "workers": "workers",
    "out": "output",
}


def configure_logging(verbose: bool = False, log_file: Optional[str] = None) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)
    if log_file:
        handler = logging.FileHandler(log_file)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(handler)


def experiment_config(args: argparse.Namespace, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Defaults (or base), overridden by the config file, overridden by flags."""
    values = load_config_file(args.config) if args.config else {}
    for flag, name in EXPERIMENT_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None and value is not False:
            values[name] = value
    return ExperimentConfig.from_mapping(values, base)


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--env", choices=ENV_NAMES)
    parser.add_argument("--size", type=int, help="grid size, button count or pipe count")
    parser.add_argument("--agent", choices=AGENT_KINDS)
    parser.add_argument("--regime", choices=tuple(REGIMES))
    parser.add_argument("--rollout-length", type=int)
    parser.add_argument("--q-step-size", type=float)
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--seeds", type=int)
    parser.add_argument("--base-seed", type=int)
    parser.add_argument("--disable-spontaneous", action="store_true")
    parser.add_argument("--eval-interval", type=int)
    parser.add_argument("--eval-episodes", type=int)
    parser.add_argument("--eval-steps", type=int)
    parser.add_argument("--scale", type=float, help="fraction of the regime's environment steps")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--out", help="output directory")


def _print_json(data) -> None:
    print(json.dumps(data, indent=2, default=str))


def _solve_mdp_file(path: str) -> dict:
    mdp = load_mdp_file(path)
    q = solve_optimal_q(mdp)
    return {
        "q": q.to_dict(),
        "greedy": {repr(s): sorted(greedy_actions(q, s)) for s in mdp.states},
    }


def cmd_verify_theorem(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    if args.mdp_file:
        _print_json(_solve_mdp_file(args.mdp_file))
        return 0
    if args.family_file:
        family, dataset = hypothesis_lab.load_family_file(args.family_file)
        _print_json(hypothesis_lab.verify_theorem(family, dataset, args.workers).to_dict())
        return 0
    everything = not (args.extended or args.tabular)
    report = {"theorem": hypothesis_lab.counterexample_report(args.workers)}
    if everything or args.extended:
        report["extended"] = hypothesis_lab.extended_report(args.workers)
    if everything or args.tabular:
        report["tabular"] = hypothesis_lab.tabular_report(args.tabular_datasets, rng, args.workers)
    if args.fuzz:
        report["fuzz_cases"] = hypothesis_lab.fuzz_subset(args.fuzz, rng)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
        logger.info(f"Wrote theorem report to {args.out}")
    _print_json(report)
    ok = report["theorem"]["strict"] and report["theorem"]["H_M"] == 1
    ok = ok and report.get("extended", {"strict": True})["strict"]
    ok = ok and report.get("tabular", {"all_equal": True})["all_equal"]
    return 0 if ok else 1


def cmd_run(args: argparse.Namespace) -> int:
    config = experiment_config(args)
    records = harness.run(config, resume=not args.no_resume)
    failed = sum(r.failed for r in records)
    logger.info(f"Finished {len(records)} seeds ({failed} failed) in {Path(config.output) / harness.config_hash(config)}")
    return 0 if failed == 0 else 1


def cmd_grid_search(args: argparse.Namespace) -> int:
    config = experiment_config(args)
    result = harness.grid_search(config, GridSpec(), tuning_size=args.tuning_size)
    _print_json({
        "best_step_size": result.best_step_size,
        "best_temperature": result.best_temperature,
        "best_score": result.best_score,
        "extensions": result.extensions,
    })
    return 0


def cmd_offline(args: argparse.Namespace) -> int:
    coverages = tuple(CoverageLevel) if args.coverage == ["all"] else tuple(CoverageLevel(c) for c in args.coverage)
    result = harness.run_offline_suite(
        args.out, coverages=coverages, agents=args.agents, seeds=args.seeds,
        steps=args.steps, base_seed=args.base_seed, workers=args.workers,
    )
    _print_json(result.matrix())
    return 0


def _layout(text: str) -> frozenset:
    if text in illustrative_maze.EVALUATION_LAYOUTS:
        return illustrative_maze.EVALUATION_LAYOUTS[text]
    try:
        return frozenset(tuple(int(v) for v in cell.split(",")) for cell in text.split(";") if cell)
    except ValueError:
        raise ConfigError(f"layout must be 'lower', 'upper' or 'r,c;r,c', got {text!r}")


def cmd_probe_smoothing(args: argparse.Namespace) -> int:
    if args.model:
        model = SimpleDynamicsModel.from_params(load_checkpoint(args.model), args.pipes)
    else:
        model = probes.FluteOracle(args.pipes)
    profile = probes.smoothing_probe(model, args.pipes, np.random.default_rng(args.seed), steps=args.steps)
    harness.write_rows(args.out, profile.rows())
    _print_json(profile.rows())
    return 0


def cmd_probe_frozen(args: argparse.Namespace) -> int:
    study = ExperimentConfig(env="panflute", size=probes.FROZEN_STUDY_PIPES, agent_kind="simple-model")
    config = replace(experiment_config(args, study), env="panflute", agent_kind="simple-model")
    ckpt_dir = Path(args.ckpt_dir)
    paths = sorted(ckpt_dir.glob("model_*.bin"))
    if not paths:
        steps = probes.geometric_schedule(args.train_steps)
        logger.info(f"No checkpoints in {ckpt_dir}; training a model and saving at {steps}")
        training = replace(config, regime="high", scale=min(1.0, args.train_steps / REGIMES["high"][0]))
        result = train_online(training, np.random.default_rng(args.base_seed or 0), checkpoint_steps=steps)
        for step, params in result.checkpoints.items():
            save_checkpoint(params, ckpt_dir / f"model_{step}")
        paths = sorted(ckpt_dir.glob("model_*.bin"))
    checkpoints = {int(p.stem.split("_")[1]): load_checkpoint(p) for p in paths}
    results = probes.frozen_model_study(checkpoints, config, config.seeds, config.base_seed)
    rows = [r.to_dict() for r in results]
    harness.write_rows(Path(config.output) / "frozen_model.csv", rows)
    _print_json(rows)
    return 0


def cmd_probe_cells(args: argparse.Namespace) -> int:
    qnets = harness.load_qnets(args.qnet_dir)
    if not qnets:
        logger.error(f"No seed_*.bin checkpoints in {args.qnet_dir}")
        return 1
    grid = probes.cell_correctness(qnets, _layout(args.layout))
    if args.out:
        harness.write_rows(args.out, grid.rows())
    _print_json({"passed": grid.passed, "failing_cells": grid.failing_cells, "cells": grid.rows()})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modelgen", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--log-file", help="also write the log to this file")
    commands = parser.add_subparsers(dest="command", required=True)

    verify = commands.add_parser("verify-theorem", help="exact hypothesis-class checks")
    verify.add_argument("--family-file", help="family and dataset in key = value form")
    verify.add_argument("--mdp-file", help="solve one plain-text MDP and print its optimal Q")
    verify.add_argument("--extended", action="store_true", help="include the fixed-action extension")
    verify.add_argument("--tabular", action="store_true", help="include the tabular equality check")
    verify.add_argument("--fuzz", type=int, default=0, help="random factored cases to check")
    verify.add_argument("--tabular-datasets", type=int, default=20)
    verify.add_argument("--workers", type=int, default=1)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out", help="write the JSON report here")
    verify.set_defaults(handler=cmd_verify_theorem)

    run = commands.add_parser("run", help="run seeds of one experiment")
    _add_experiment_flags(run)
    run.add_argument("--no-resume", action="store_true", help="rerun seeds that already have records")
    run.set_defaults(handler=cmd_run)

    grid = commands.add_parser("grid-search", help="search step size and temperature")
    _add_experiment_flags(grid)
    grid.add_argument("--tuning-size", type=int)
    grid.set_defaults(handler=cmd_grid_search)

    offline = commands.add_parser("offline", help="offline maze coverage suite")
    offline.add_argument("--coverage", nargs="+", default=["all"],
                         choices=["all", *(c.value for c in CoverageLevel)])
    offline.add_argument("--agents", nargs="+", default=list(harness.OFFLINE_AGENTS),
                         choices=list(harness.OFFLINE_AGENTS))
    offline.add_argument("--seeds", type=int, default=30)
    offline.add_argument("--steps", type=int, default=harness.OFFLINE_STEPS)
    offline.add_argument("--base-seed", type=int, default=0)
    offline.add_argument("--workers", type=int, default=1)
    offline.add_argument("--out", default="results/offline")
    offline.set_defaults(handler=cmd_offline)

    probe = commands.add_parser("probe", help="model and policy diagnostics")
    probe_kinds = probe.add_subparsers(dest="probe", required=True)

    smoothing = probe_kinds.add_parser("smoothing", help="reward smoothing profile on PanFlute")
    smoothing.add_argument("--model", help="model checkpoint (.bin); ground truth when omitted")
    smoothing.add_argument("--pipes", type=int, default=9)
    smoothing.add_argument("--steps", type=int, default=probes.SMOOTHING_CORPUS_STEPS)
    smoothing.add_argument("--seed", type=int, default=0)
    smoothing.add_argument("--out", default="profile.csv")
    smoothing.set_defaults(handler=cmd_probe_smoothing)

    frozen = probe_kinds.add_parser("frozen", help="learning speed with frozen models")
    _add_experiment_flags(frozen)
    frozen.add_argument("--ckpt-dir", required=True)
    frozen.add_argument("--train-steps", type=int, default=100_000,
                        help="model training length when the directory has no checkpoints")
    frozen.set_defaults(handler=cmd_probe_frozen)

    cells = probe_kinds.add_parser("cells", help="per-cell greedy correctness")
    cells.add_argument("--qnet-dir", required=True)
    cells.add_argument("--layout", default="lower", help="lower, upper or walls as 'r,c;r,c'")
    cells.add_argument("--out")
    cells.set_defaults(handler=cmd_probe_cells)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.log_file)
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 2
    except MDPError as e:
        logger.error(f"Bad MDP description: {e}")
        return 2
    except hypothesis_lab.TheoremViolationError as e:
        logger.error(f"Class relation violated: {e}")
        return 1
    except hypothesis_lab.HypothesisError as e:
        logger.error(f"Bad family or dataset: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
