"""Experiment harness.

Runs seeds of an experiment, writes per-seed learning curves and a
summary, searches the step-size/temperature grid and runs the offline
maze suite. Completed (config hash, seed) cells found on disk are skipped.

Output layout under the configured output directory:

    <config hash>/config.json
    <config hash>/seed_<n>.csv      metrics stream of one seed
    <config hash>/seed_<n>.json     RunRecord of one seed
    <config hash>/summary.json      final means and confidence intervals
"""

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from src import illustrative_maze
from src.agents import AgentError, QNetwork
from src.config import AgentHyper, ExperimentConfig, GridSpec, TUNING_SIZES
from src.illustrative_maze import CoverageLevel
from src.probes import FINAL_WINDOW, cell_correctness, mean_ci
from src.tensor_nn import MlpParams, NetworkError, load_checkpoint, save_checkpoint
from src.training import METRIC_FIELDS, MetricsRow, train_offline, train_online
from src.transitions import write_dataset

logger = logging.getLogger(__name__)

# label -> (agent kind, rollout length)
OFFLINE_AGENTS = {
    "model-free": ("er", 1),
    "1-step": ("simple-model", 1),
    "10-step": ("simple-model", 10),
}
OFFLINE_STEP_SIZE = 2e-4
OFFLINE_TEMPERATURE = 0.1
OFFLINE_STEPS = 1_000_000


@dataclass
class RunRecord:
    """Outcome of one seed of one configuration."""

    config_hash: str
    seed: int
    curve: list = field(default_factory=list)
    final_score: Optional[float] = None
    failed: bool = False
    error: Optional[str] = None
    env_steps: int = 0

    def to_dict(self) -> dict:
        data = asdict(self)
        data["curve"] = [[int(u), float(s)] for u, s in self.curve]
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        data = dict(data)
        data["curve"] = [(int(u), float(s)) for u, s in data.get("curve", [])]
        return cls(**data)


def config_hash(config: ExperimentConfig) -> str:
    """Stable hash of the fields that determine results."""
    canonical = json.dumps(config.identity(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def final_score(curve: Sequence, window: int = FINAL_WINDOW) -> Optional[float]:
    """Mean of the last `window` evaluation scores."""
    if not curve:
        return None
    return float(np.mean([s for _, s in curve[-window:]]))


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_curve(path: Union[str, Path], rows: Iterable[MetricsRow]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(METRIC_FIELDS)
        for row in rows:
            writer.writerow([_format(getattr(row, name)) for name in METRIC_FIELDS])


def read_curve(path: Union[str, Path]) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as handle:
        for raw in csv.DictReader(handle):
            values = {}
            for name in METRIC_FIELDS:
                text = raw[name]
                if name in ("update_index", "env_steps"):
                    values[name] = int(text)
                else:
                    values[name] = float(text) if text != "" else None
            rows.append(MetricsRow(**values))
    return rows


def write_rows(path: Union[str, Path], rows: Sequence[dict]) -> None:
    """Write dicts with a shared key set as CSV."""
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(v) for k, v in row.items()})


def write_summary(path: Union[str, Path], records: Sequence[RunRecord], config: Optional[ExperimentConfig] = None,
                  extra: Optional[dict] = None) -> dict:
    """Write final-score statistics over seeds to JSON and return them."""
    finals = [r.final_score for r in records if not r.failed and r.final_score is not None]
    summary = {
        "config_hash": records[0].config_hash if records else None,
        "seeds": len(records),
        "failed": sum(r.failed for r in records),
        "final_scores": {str(r.seed): r.final_score for r in records},
    }
    if finals:
        mean, half = mean_ci(finals)
        summary.update(final_mean=mean, final_ci_low=mean - half, final_ci_high=mean + half)
    if config is not None:
        summary["config"] = asdict(config)
        summary["hyperparameters"] = {"q_step_size": config.q_step_size, "temperature": config.temperature}
    if extra:
        summary.update(extra)
    Path(path).write_text(json.dumps(summary, indent=2))
    return summary


def run_seed(config: ExperimentConfig, seed: int) -> tuple[RunRecord, list[MetricsRow]]:
    """Train one seed; a non-finite or agent failure is returned as a failed record."""
    digest = config_hash(config)
    logger.info(f"Run {digest} seed {seed}: start")
    try:
        result = train_online(config, np.random.default_rng(seed))
    except (NetworkError, AgentError) as e:
        logger.error(f"Run {digest} seed {seed} failed: {e}")
        return RunRecord(digest, seed, failed=True, error=str(e)), []
    curve = [(row.update_index, row.eval_score) for row in result.metrics]
    record = RunRecord(digest, seed, curve, final_score(curve), env_steps=result.env_steps)
    logger.info(f"Run {digest} seed {seed}: final score {record.final_score}")
    return record, result.metrics


def _seed_task(args):
    return run_seed(*args)


def run(config: ExperimentConfig, resume: bool = True) -> list[RunRecord]:
    """
    Run every seed of a configuration and write curves, records and summary.

    Seeds are base_seed .. base_seed + seeds - 1. With `resume`, seeds whose
    record already exists are read back instead of rerun.
    """
    digest = config_hash(config)
    run_dir = Path(config.output) / digest
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(asdict(config), indent=2, sort_keys=True))

    records = {}
    seeds = list(range(config.base_seed, config.base_seed + config.seeds))
    for seed in seeds:
        record_path = run_dir / f"seed_{seed}.json"
        if resume and record_path.exists():
            records[seed] = RunRecord.from_dict(json.loads(record_path.read_text()))
            logger.info(f"Skipping completed cell {digest} seed {seed}")
    todo = [s for s in seeds if s not in records]

    if config.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = pool.map(_seed_task, [(config, s) for s in todo])
            finished = list(outcomes)
    else:
        finished = [run_seed(config, s) for s in todo]

    for record, rows in finished:
        if not record.failed:
            write_curve(run_dir / f"seed_{record.seed}.csv", rows)
        (run_dir / f"seed_{record.seed}.json").write_text(json.dumps(record.to_dict()))
        records[record.seed] = record

    ordered = [records[s] for s in seeds]
    write_summary(run_dir / "summary.json", ordered, config)
    return ordered


@dataclass
class GridResult:
    best_step_size: float
    best_temperature: float
    best_score: float
    grid: GridSpec
    scores: dict
    extensions: dict

    def table(self) -> list[dict]:
        return [
            {"step_size": a, "temperature": t, "mean_final_score": self.scores[(a, t)]}
            for a, t in self.grid.cells
        ]

    def step_size_slice(self) -> list[dict]:
        return [{"step_size": a, "mean_final_score": self.scores[(a, self.best_temperature)]}
                for a in self.grid.step_sizes]

    def temperature_slice(self) -> list[dict]:
        return [{"temperature": t, "mean_final_score": self.scores[(self.best_step_size, t)]}
                for t in self.grid.temperatures]


def _mean_final(records: Sequence[RunRecord]) -> float:
    finals = [r.final_score for r in records if not r.failed and r.final_score is not None]
    return float(np.mean(finals)) if finals else float("-inf")


def _best_cell(grid: GridSpec, scores: dict) -> tuple[float, float]:
    # ties go to the smaller step size, then the smaller temperature
    return max(grid.cells, key=lambda cell: (scores[cell], -cell[0], -cell[1]))


def grid_search(config: ExperimentConfig, grid: GridSpec = GridSpec(), tuning_size: Optional[int] = None,
                runner: Optional[Callable[[ExperimentConfig], list[RunRecord]]] = None) -> GridResult:
    """
    Evaluate every (step size, temperature) cell on the tuning instance.

    If the best cell lies on a grid boundary the grid grows one octave in
    that direction and only the new cells are evaluated; each axis grows at
    most `grid.max_extensions` times. Writes grid.csv and both sensitivity
    slices next to the runs.
    """
    runner = runner or run
    base = replace(config, size=tuning_size or TUNING_SIZES[config.env])
    scores = {}
    extensions = {"step_size": 0, "temperature": 0}

    def evaluate(cells):
        for a, t in cells:
            if (a, t) not in scores:
                scores[(a, t)] = _mean_final(runner(replace(base, q_step_size=a, temperature=t)))

    evaluate(grid.cells)
    while True:
        best = _best_cell(grid, scores)
        grown = False
        for axis, values, value in (("step_size", grid.step_sizes, best[0]),
                                    ("temperature", grid.temperatures, best[1])):
            if extensions[axis] >= grid.max_extensions:
                continue
            if value == values[-1]:
                grid = grid.extended(axis, upward=True)
            elif value == values[0]:
                grid = grid.extended(axis, upward=False)
            else:
                continue
            extensions[axis] += 1
            grown = True
            logger.info(f"Best {axis} {value} on the grid boundary; extending")
        if not grown:
            break
        evaluate(grid.cells)

    a, t = _best_cell(grid, scores)
    result = GridResult(a, t, scores[(a, t)], grid, scores, extensions)
    out_dir = Path(config.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_rows(out_dir / "grid.csv", result.table())
    write_rows(out_dir / "sensitivity_step_size.csv", result.step_size_slice())
    write_rows(out_dir / "sensitivity_temperature.csv", result.temperature_slice())
    logger.info(f"Grid search best: step size {a}, temperature {t}, score {result.best_score:.4f}")
    return result


@dataclass
class OfflineSuiteResult:
    """Correctness grids and verdicts per (coverage, agent label)."""

    grids: dict
    verdicts: dict

    def matrix(self) -> list[dict]:
        rows = []
        for coverage in CoverageLevel:
            row = {"coverage": coverage.value}
            for label in OFFLINE_AGENTS:
                verdict = self.verdicts.get((coverage.value, label))
                row[label] = "" if verdict is None else ("pass" if verdict else "fail")
            rows.append(row)
        return rows


def _offline_task(args) -> MlpParams:
    dataset, kind, length, steps, seed, step_size, temperature, hyper = args
    result = train_offline(dataset, kind, length, steps, np.random.default_rng(seed),
                           illustrative_maze.ACTION_COUNT, step_size, temperature, hyper)
    return result.qnet.params


def run_offline_suite(out_dir: Union[str, Path], coverages: Iterable[CoverageLevel] = tuple(CoverageLevel),
                      agents: Iterable[str] = tuple(OFFLINE_AGENTS), seeds: int = 30,
                      steps: int = OFFLINE_STEPS, layouts: Optional[dict] = None, base_seed: int = 0,
                      workers: int = 1, hyper: AgentHyper = AgentHyper()) -> OfflineSuiteResult:
    """
    Train offline agents on every coverage level and grade their greedy policies.

    For each (coverage, agent) cell: `seeds` Q-networks are trained with the
    fixed step size 2e-4 and temperature 0.1, saved as checkpoints, and
    graded on every evaluation layout. A cell passes when every layout passes.
    """
    out_dir = Path(out_dir)
    layouts = layouts or illustrative_maze.EVALUATION_LAYOUTS
    grids, verdicts = {}, {}
    for coverage in coverages:
        coverage = CoverageLevel(coverage)
        dataset = illustrative_maze.build_coverage_dataset(coverage, layouts.values())
        cov_dir = out_dir / coverage.value
        cov_dir.mkdir(parents=True, exist_ok=True)
        write_dataset(cov_dir / "dataset.csv", dataset)
        for label in agents:
            kind, length = OFFLINE_AGENTS[label]
            tasks = [(dataset, kind, length, steps, seed, OFFLINE_STEP_SIZE, OFFLINE_TEMPERATURE, hyper)
                     for seed in range(base_seed, base_seed + seeds)]
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    params = list(pool.map(_offline_task, tasks))
            else:
                params = [_offline_task(task) for task in tasks]
            cell_dir = cov_dir / label
            for seed, p in zip(range(base_seed, base_seed + seeds), params):
                save_checkpoint(p, cell_dir / f"seed_{seed}")
            qnets = [QNetwork.from_params(p) for p in params]
            cell = {name: cell_correctness(qnets, walls) for name, walls in layouts.items()}
            for name, grid in cell.items():
                write_rows(cell_dir / f"cells_{name}.csv", grid.rows())
            grids[(coverage.value, label)] = cell
            verdicts[(coverage.value, label)] = all(g.passed for g in cell.values())
            logger.info(f"Offline {coverage.value} / {label}: "
                        f"{'pass' if verdicts[(coverage.value, label)] else 'fail'}")
    result = OfflineSuiteResult(grids, verdicts)
    write_rows(out_dir / "verdicts.csv", result.matrix())
    return result


def load_qnets(directory: Union[str, Path]) -> list[QNetwork]:
    """Q-networks from every seed checkpoint in a directory."""
    paths = sorted(Path(directory).glob("seed_*.bin"))
    return [QNetwork.from_params(load_checkpoint(p)) for p in paths]
