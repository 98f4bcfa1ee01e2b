"""Tests for training module."""

from dataclasses import replace

import numpy as np
import pytest

from src.agents import EmptyBatchError
from src.config import AgentHyper, EvalProtocol, ExperimentConfig
from src.environments import OpenGrid, PanFlute
from src.illustrative_maze import CoverageLevel, build_coverage_dataset
from src.training import evaluate_greedy, train_offline, train_online

SMALL = AgentHyper(hidden_units=16, hidden_layers=1, training_start=20, buffer_size=1000)


@pytest.fixture
def tiny_config():
    """50 low-regime steps (500 updates) on 3-pipe PanFlute, evaluated every 100 updates."""
    return ExperimentConfig(
        env="panflute", size=3, agent_kind="er", regime="low", scale=0.0005,
        eval_interval=100, eval_steps=30, hyper=SMALL,
    )


class CyclingPolicy:
    """Stands in for a Q-network: greedy actions cycle 0, 1, ..., n-1."""

    def __init__(self, n):
        self.n = n
        self.t = -1

    def greedy(self, obs):
        self.t += 1
        return self.t % self.n


class FixedPolicy:
    def __init__(self, action):
        self.action = action

    def greedy(self, obs):
        return self.action


class TestEvaluateGreedy:
    """Tests for greedy evaluation."""

    def test_continuing_reward_rate(self):
        """Test reward per step of the pipelined PanFlute policy."""
        protocol = EvalProtocol(eval_steps=300)
        score = evaluate_greedy(lambda r: PanFlute(3, r, disable_spontaneous=True), CyclingPolicy(3),
                                protocol, np.random.default_rng(0))
        assert score == pytest.approx(99 / 300)

    def test_episodes_capped(self):
        """Test that an episode that never ends is cut at 4 N^2 steps."""
        protocol = EvalProtocol(eval_episodes=3)
        score = evaluate_greedy(lambda r: OpenGrid(3, r, disable_spontaneous=True), FixedPolicy(0),
                                protocol, np.random.default_rng(0))
        assert score == -36.0


class TestTrainOnline:
    """Tests for the online loop."""

    def test_evaluation_points(self, tiny_config):
        """Test evaluations exactly eval_interval updates apart."""
        result = train_online(tiny_config, np.random.default_rng(0))
        assert [row.update_index for row in result.metrics] == [100, 200, 300, 400, 500]
        assert result.env_steps == SMALL.training_start + 50

    def test_er_has_no_model_losses(self, tiny_config):
        """Test that model-free rows leave the model loss columns empty."""
        result = train_online(tiny_config, np.random.default_rng(0))
        assert all(row.model_obs_loss is None for row in result.metrics)
        assert all(np.isfinite(row.td_loss) for row in result.metrics)

    def test_reproducible(self, tiny_config):
        """Test that the same seed gives the same metrics."""
        a = train_online(tiny_config, np.random.default_rng(5))
        b = train_online(tiny_config, np.random.default_rng(5))
        assert [(r.eval_score, r.td_loss) for r in a.metrics] == [(r.eval_score, r.td_loss) for r in b.metrics]

    def test_simple_model_checkpoints(self, tiny_config):
        """Test model losses and model checkpoints at requested steps."""
        config = replace(tiny_config, agent_kind="simple-model")
        result = train_online(config, np.random.default_rng(1), checkpoint_steps=[30, 60])
        assert sorted(result.checkpoints) == [30, 60]
        assert all(row.model_obs_loss is not None for row in result.metrics)

    def test_stop_at_score(self, tiny_config):
        """Test that the run stops at the first evaluation reaching the threshold."""
        result = train_online(tiny_config, np.random.default_rng(2), stop_at_score=0.0)
        assert len(result.metrics) == 1
        assert result.threshold_reached_at == result.env_steps

    def test_perfect_model_runs(self, tiny_config):
        """Test the perfect-model agent end to end."""
        config = replace(tiny_config, agent_kind="perfect-model")
        result = train_online(config, np.random.default_rng(3))
        assert result.agent.budget.maximum == 320


class TestTrainOffline:
    """Tests for the offline loop."""

    def test_updates(self):
        """Test one DQN update per step on maze data."""
        dataset = build_coverage_dataset(CoverageLevel.NO_EVALUATION)
        result = train_offline(dataset, "simple-model", 10, 3, np.random.default_rng(0), 5, hyper=SMALL)
        assert result.qnet.updates == 3
        assert result.model is not None

    def test_empty_dataset(self):
        """Test that offline training needs data."""
        with pytest.raises(EmptyBatchError):
            train_offline([], "er", 1, 3, np.random.default_rng(0), 5)

    def test_unknown_kind(self):
        """Test that only er and simple-model agents train offline."""
        dataset = build_coverage_dataset(CoverageLevel.NO_EVALUATION)
        with pytest.raises(ValueError):
            train_offline(dataset, "perfect-model", 10, 3, np.random.default_rng(0), 5)
