"""Diagnostics over trained models and value networks.

- smoothing_probe: how a model's reward and all-ends-next predictions vary
  with the true number of active PanFlute pipe ends.
- frozen_model_study: how fast fresh Q-networks learn from frozen models
  saved at different points of model training.
- cell_correctness: per-cell greedy choices of offline-trained networks on
  an evaluation maze layout.
- model_position_accuracy, aggregate: model accuracy on agent position and
  learning-curve statistics over seeds.
"""

import logging
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from src import illustrative_maze
from src.agents import ModelPrediction, QNetwork, SimpleDynamicsModel
from src.config import ExperimentConfig
from src.environments import PanFlute
from src.tensor_nn import MlpParams
from src.training import train_online
from src.transitions import Transition, TransitionBatch

logger = logging.getLogger(__name__)

ORDERED_ACTION_PROBABILITY = 0.8
SMOOTHING_CORPUS_STEPS = 100_000
FROZEN_STUDY_PIPES = 9
NEAR_OPTIMAL_FRACTION = 0.95
CI_LEVEL = 0.95
FINAL_WINDOW = 10


class ProbeError(ValueError):
    """Raised when probe inputs are inconsistent."""
    pass


@dataclass
class SmoothingProfile:
    """Per-bin means indexed by the number of active pipe ends; None for empty bins."""

    reward_means: tuple
    all_ends_next: tuple
    reward_counts: tuple
    next_counts: tuple

    def rows(self) -> list[dict]:
        return [
            {
                "active_ends": k,
                "reward_mean": self.reward_means[k],
                "reward_count": self.reward_counts[k],
                "all_ends_next_prob": self.all_ends_next[k],
                "next_count": self.next_counts[k],
            }
            for k in range(len(self.reward_means))
        ]


class FluteOracle:
    """
    Ground-truth predictor for PanFlute: exact reward, exact per-cell
    marginals of the next observation, and the exact joint probability that
    every end is active next step.

    The ends are correlated (one spontaneous event switches them all on), so
    the joint is not the product of the end marginals.
    """

    def __init__(self, pipes: int, disable_spontaneous: bool = False):
        self.env = PanFlute(pipes, np.random.default_rng(0), disable_spontaneous=True)
        self.spontaneous = 0.0 if disable_spontaneous else 1.0 / (pipes * pipes)
        self.ends = self.env.end_indices()

    def _outcomes(self, obs: np.ndarray, actions: np.ndarray):
        """Transitions with spontaneous events switched off."""
        for o, a in zip(np.atleast_2d(obs), np.atleast_1d(actions)):
            yield self.env.transition(self.env.state_from_observation(o), int(a), self.env.rng)

    def predict(self, obs: np.ndarray, actions: np.ndarray) -> ModelPrediction:
        probs, rewards = [], []
        for outcome in self._outcomes(obs, actions):
            p = self.env.encode(outcome.state).astype(np.float64)
            p[self.ends] += (1.0 - p[self.ends]) * self.spontaneous
            probs.append(p)
            rewards.append(outcome.reward)
        return ModelPrediction(np.array(probs), np.array(rewards), np.zeros(len(rewards)))

    def all_ends_next(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.array([
            1.0 if outcome.state.active_ends == self.env.pipes else self.spontaneous
            for outcome in self._outcomes(obs, actions)
        ])


def _ordered_policy_corpus(pipes: int, steps: int, rng: np.random.Generator,
                           disable_spontaneous: bool) -> TransitionBatch:
    """Trajectory where each action is the successor of the previous one with probability 0.8."""
    env_rng, policy_rng = rng.spawn(2)
    env = PanFlute(pipes, env_rng, disable_spontaneous)
    obs = env.reset()
    records, previous = [], pipes - 1
    for _ in range(steps):
        if policy_rng.random() < ORDERED_ACTION_PROBABILITY:
            action = (previous + 1) % pipes
        else:
            action = int(policy_rng.integers(pipes))
        step = env.step(action)
        records.append(Transition(obs, action, step.reward, step.obs, False))
        obs, previous = step.obs, action
    return TransitionBatch.from_transitions(records)


def _binned_means(values: np.ndarray, bins: np.ndarray, size: int) -> tuple[tuple, tuple]:
    counts = np.bincount(bins, minlength=size)
    sums = np.bincount(bins, weights=values, minlength=size)
    means = tuple(float(s / c) if c else None for s, c in zip(sums, counts))
    return means, tuple(int(c) for c in counts)


def smoothing_probe(model, pipes: int, rng: np.random.Generator, steps: int = SMOOTHING_CORPUS_STEPS,
                    disable_spontaneous: bool = False, chunk: int = 4096) -> SmoothingProfile:
    """
    Bin model predictions on a real PanFlute corpus by active pipe ends.

    Predicted reward is binned by the true number of currently active ends;
    the predicted probability that every end is active next step is binned by
    the true number active next step. That probability comes from the model's
    all_ends_next(obs, actions) when it has one, and otherwise is the product
    of the per-end probabilities, which is the joint for a model with
    independent feature outputs.

    Args:
        model: Anything with predict(obs, actions) -> ModelPrediction
        pipes: Number of pipes
        rng: Generator for the corpus
        steps: Corpus length
    """
    corpus = _ordered_policy_corpus(pipes, steps, rng, disable_spontaneous)
    ends = PanFlute(pipes, rng).end_indices()
    joint = getattr(model, "all_ends_next", None)
    rewards, all_next = [], []
    for start in range(0, len(corpus), chunk):
        part = corpus.take(slice(start, start + chunk))
        pred = model.predict(part.obs, part.actions)
        rewards.append(np.asarray(pred.reward_mean, dtype=np.float64))
        if joint is not None:
            all_next.append(np.asarray(joint(part.obs, part.actions), dtype=np.float64))
        else:
            all_next.append(np.prod(np.asarray(pred.next_feature_probs, dtype=np.float64)[:, ends], axis=1))
    current_bins = corpus.obs[:, ends].sum(axis=1)
    next_bins = corpus.next_obs[:, ends].sum(axis=1)
    reward_means, reward_counts = _binned_means(np.concatenate(rewards), current_bins, pipes + 1)
    next_means, next_counts = _binned_means(np.concatenate(all_next), next_bins, pipes + 1)
    return SmoothingProfile(reward_means, next_means, reward_counts, next_counts)


@dataclass
class FrozenModelResult:
    """Steps to near-optimal reward rate per seed; None marks a censored seed."""

    checkpoint_step: int
    steps_to_optimal: tuple
    budget: int
    reward_at_six: Optional[float]

    @property
    def successes(self) -> int:
        return sum(s is not None for s in self.steps_to_optimal)

    @property
    def failures(self) -> int:
        return sum(s is None for s in self.steps_to_optimal)

    @property
    def mean_steps(self) -> Optional[float]:
        reached = [s for s in self.steps_to_optimal if s is not None]
        return float(np.mean(reached)) if reached else None

    def to_dict(self) -> dict:
        return {
            "checkpoint_step": self.checkpoint_step,
            "successes": self.successes,
            "failures": self.failures,
            "mean_steps_to_optimal": self.mean_steps,
            "budget": self.budget,
            "predicted_reward_at_6_ends": self.reward_at_six,
        }


def geometric_schedule(limit: int, start: int = 1000) -> list[int]:
    """1k, 2k, 5k, 10k, 20k, 50k, ... up to limit."""
    steps, scale = [], start
    while True:
        for factor in (1, 2, 5):
            if scale * factor > limit:
                return steps
            steps.append(scale * factor)
        scale *= 10


def frozen_model_study(checkpoints: Mapping[int, MlpParams], config: ExperimentConfig, seeds: int,
                       base_seed: int = 0, probe_steps: int = 10_000) -> list[FrozenModelResult]:
    """
    Train fresh Q-networks against each frozen PanFlute model.

    A seed succeeds at the first evaluation whose greedy reward rate reaches
    95% of 1/n; seeds that never do within the configured budget are
    censored.

    Args:
        checkpoints: Model parameters keyed by the step they were saved at
        config: PanFlute configuration (the agent kind is forced to the simple model)
        seeds: Seeds per checkpoint
    """
    if config.env != "panflute":
        raise ProbeError(f"the frozen-model study runs on panflute, got {config.env}")
    config = replace(config, agent_kind="simple-model")
    pipes = config.size
    threshold = NEAR_OPTIMAL_FRACTION / pipes
    budget = config.hyper.training_start + config.total_steps
    results = []
    for step in sorted(checkpoints):
        params = checkpoints[step]
        reached = []
        for seed in range(base_seed, base_seed + seeds):
            run = train_online(config, np.random.default_rng(seed), frozen_model=params, stop_at_score=threshold)
            reached.append(run.threshold_reached_at)
        model = SimpleDynamicsModel.from_params(params, pipes, config.hyper)
        profile = smoothing_probe(model, pipes, np.random.default_rng(base_seed), steps=probe_steps)
        reward_at_six = profile.reward_means[6] if pipes >= 6 else None
        result = FrozenModelResult(step, tuple(reached), budget, reward_at_six)
        logger.info(f"Frozen model @ {step}: {result.successes} reached near-optimal, {result.failures} censored")
        results.append(result)
    return results


@dataclass
class CorrectnessGrid:
    """Greedy-choice frequencies per cell of one evaluation layout."""

    walls: frozenset
    frequencies: dict
    optimal: dict
    excluded: tuple
    seeds: int

    def correct_fraction(self, cell) -> float:
        return float(sum(self.frequencies[cell][a] for a in self.optimal[cell]))

    @property
    def failing_cells(self) -> list:
        return [cell for cell in self.frequencies if self.correct_fraction(cell) < 0.5]

    @property
    def passed(self) -> bool:
        return not self.failing_cells

    def rows(self) -> list[dict]:
        return [
            {
                "row": cell[0],
                "col": cell[1],
                "optimal_actions": " ".join(str(a) for a in sorted(self.optimal[cell])),
                "correct_fraction": self.correct_fraction(cell),
                **{f"freq_{a}": float(f) for a, f in enumerate(self.frequencies[cell])},
            }
            for cell in sorted(self.frequencies)
        ]


def cell_correctness(qnets: Sequence[QNetwork], walls) -> CorrectnessGrid:
    """
    Frequency of each greedy action per free cell of a layout, over networks.

    A cell fails when more than half of the networks choose a non-optimal
    action. Cells that cannot reach the goal are excluded.
    """
    if not qnets:
        raise ProbeError("cell_correctness needs at least one network")
    walls = frozenset(tuple(w) for w in walls)
    optimal = illustrative_maze.optimal_actions(walls)
    excluded = tuple(
        cell for cell in illustrative_maze.free_cells(walls)
        if cell != illustrative_maze.GOAL and cell not in optimal
    )
    if excluded:
        logger.info(f"Excluding unreachable cells {excluded}")
    frequencies = {}
    for cell in optimal:
        obs = illustrative_maze.encode(cell, walls)
        counts = np.zeros(illustrative_maze.ACTION_COUNT)
        for qnet in qnets:
            counts[qnet.greedy(obs)] += 1
        frequencies[cell] = tuple(counts / len(qnets))
    return CorrectnessGrid(walls, frequencies, optimal, excluded, len(qnets))


def model_position_accuracy(model, transitions: Sequence[Transition], position_bits: slice = slice(0, 9)) -> float:
    """Fraction of transitions whose most probable next agent cell is the true one."""
    if not transitions:
        raise ProbeError("model_position_accuracy needs at least one transition")
    batch = TransitionBatch.from_transitions(transitions)
    pred = model.predict(batch.obs, batch.actions)
    predicted = np.argmax(np.asarray(pred.next_feature_probs)[:, position_bits], axis=1)
    actual = np.argmax(batch.next_obs[:, position_bits], axis=1)
    return float(np.mean(predicted == actual))


def mean_ci(values: Sequence[float], level: float = CI_LEVEL) -> tuple[float, float]:
    """Mean and normal-approximation half width; half width 0 for one value."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ProbeError("no values to summarise")
    if len(values) == 1:
        return float(values[0]), 0.0
    z = stats.norm.ppf(0.5 + level / 2)
    return float(values.mean()), float(z * values.std(ddof=1) / np.sqrt(len(values)))


@dataclass
class AggregateCurve:
    config_hash: str
    update_indices: np.ndarray
    mean: np.ndarray
    half_width: np.ndarray
    smoothed: np.ndarray
    seeds: int
    failed: int

    @property
    def single_seed(self) -> bool:
        return self.seeds == 1

    @property
    def ci_low(self) -> np.ndarray:
        return self.mean - self.half_width

    @property
    def ci_high(self) -> np.ndarray:
        return self.mean + self.half_width

    def rows(self) -> list[dict]:
        return [
            {"update_index": int(u), "mean": float(m), "ci_low": float(m - h), "ci_high": float(m + h), "smoothed": float(s)}
            for u, m, h, s in zip(self.update_indices, self.mean, self.half_width, self.smoothed)
        ]


def trailing_mean(values: np.ndarray, window: int = FINAL_WINDOW) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    cumulative = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(idx - window, 0)
    return (cumulative[idx] - cumulative[lo]) / (idx - lo)


def aggregate(records: Sequence) -> AggregateCurve:
    """
    Mean learning curve with 95% intervals over the successful runs of one config.

    Raises:
        ProbeError: If records mix configs, no run succeeded, or curves are
            evaluated at different update indices
    """
    if not records:
        raise ProbeError("no records to aggregate")
    hashes = {r.config_hash for r in records}
    if len(hashes) != 1:
        raise ProbeError(f"records come from different configs: {sorted(hashes)}")
    good = [r for r in records if not r.failed]
    if not good:
        raise ProbeError("every run failed")
    indices = [tuple(u for u, _ in r.curve) for r in good]
    if len(set(indices)) != 1:
        raise ProbeError("curves are evaluated at different update indices")
    scores = np.array([[s for _, s in r.curve] for r in good], dtype=np.float64)
    if len(good) == 1:
        half = np.zeros(scores.shape[1])
        logger.warning("Single seed: confidence interval width set to 0")
    else:
        z = stats.norm.ppf(0.5 + CI_LEVEL / 2)
        half = z * scores.std(axis=0, ddof=1) / np.sqrt(len(good))
    mean = scores.mean(axis=0)
    return AggregateCurve(hashes.pop(), np.array(indices[0]), mean, half, trailing_mean(mean),
                          len(good), len(records) - len(good))
