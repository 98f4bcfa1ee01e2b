"""Online and offline training loops and greedy evaluation."""

import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from src.agents import DynaAgent, EmptyBatchError, QNetwork, SimpleDynamicsModel
from src.config import AgentHyper, EvalProtocol, ExperimentConfig
from src.environments import Environment, make_env
from src.replay_buffer import ReplayBuffer
from src.tensor_nn import MlpParams
from src.transitions import Transition, TransitionBatch

logger = logging.getLogger(__name__)

EnvFactory = Callable[[np.random.Generator], Environment]


@dataclass
class MetricsRow:
    """One evaluation point of a run."""

    update_index: int
    env_steps: int
    eval_score: float
    td_loss: float
    model_obs_loss: Optional[float] = None
    model_reward_loss: Optional[float] = None
    model_term_loss: Optional[float] = None


METRIC_FIELDS = tuple(f.name for f in fields(MetricsRow))


@dataclass
class OnlineResult:
    metrics: list[MetricsRow]
    agent: DynaAgent
    env_steps: int
    threshold_reached_at: Optional[int] = None
    checkpoints: dict[int, MlpParams] = field(default_factory=dict)


@dataclass
class OfflineResult:
    qnet: QNetwork
    model: Optional[SimpleDynamicsModel]
    agent: DynaAgent


def evaluate_greedy(env_factory: EnvFactory, qnet: QNetwork, protocol: EvalProtocol,
                    rng: np.random.Generator) -> float:
    """
    Score the greedy policy on a fresh environment instance.

    Episodic environments: mean return over `eval_episodes` episodes, each
    truncated at the environment's episode cap. Continuing environments:
    reward per step over `eval_steps` steps from a reset.
    """
    env = env_factory(rng)
    if env.episodic:
        returns = []
        for _ in range(protocol.eval_episodes):
            obs, total = env.reset(), 0.0
            for _ in range(env.episode_cap):
                result = env.step(qnet.greedy(obs))
                total += result.reward
                obs = result.obs
                if result.terminal:
                    break
            returns.append(total)
        return float(np.mean(returns))
    obs, total = env.reset(), 0.0
    for _ in range(protocol.eval_steps):
        result = env.step(qnet.greedy(obs))
        total += result.reward
        obs = result.obs
    return total / protocol.eval_steps


def build_agent(config: ExperimentConfig, env: Environment, rng: np.random.Generator,
                frozen_model: Optional[MlpParams] = None) -> DynaAgent:
    """Networks for `config.agent_kind`, initialised from `rng` (Q-network first)."""
    hyper = config.hyper
    qnet = QNetwork(env.observation_size, env.action_count, config.q_step_size, rng, hyper)
    model = None
    if frozen_model is not None:
        model = SimpleDynamicsModel.from_params(frozen_model, env.action_count, hyper)
    elif config.agent_kind == "simple-model":
        model = SimpleDynamicsModel(env.observation_size, env.action_count, rng, hyper)
    kind = "simple-model" if frozen_model is not None else config.agent_kind
    return DynaAgent(kind, qnet, config.temperature, hyper, config.rollout_length, model,
                     env if kind == "perfect-model" else None, frozen_model=frozen_model is not None)


class _LossWindow:
    """Mean losses since the last evaluation point."""

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self.td, self.obs, self.reward, self.term = [], [], [], []

    def add(self, stats) -> None:
        self.td.append(stats.td_loss)
        if stats.model_loss is not None:
            self.obs.append(stats.model_loss.observation)
            self.reward.append(stats.model_loss.reward)
            self.term.append(stats.model_loss.termination)

    def row(self, update_index: int, env_steps: int, score: float) -> MetricsRow:
        def mean(xs):
            return float(np.mean(xs)) if xs else None

        row = MetricsRow(update_index, env_steps, score, mean(self.td), mean(self.obs), mean(self.reward), mean(self.term))
        self.reset()
        return row


def train_online(config: ExperimentConfig, rng: np.random.Generator, *,
                 frozen_model: Optional[MlpParams] = None,
                 checkpoint_steps: Iterable[int] = (),
                 stop_at_score: Optional[float] = None) -> OnlineResult:
    """
    Interact with the environment and train the configured agent.

    The first `training_start` steps only fill the replay buffer; after that
    every environment step is followed by `updates_per_step` updates, for
    `total_steps` more steps. The greedy policy is evaluated every
    `eval_interval` updates.

    Args:
        config: Experiment configuration
        rng: Run generator; split into environment, agent, evaluation and
            initialisation streams
        frozen_model: Dynamics model parameters used without training
        checkpoint_steps: Environment steps at which to keep a copy of the
            learned model parameters
        stop_at_score: Stop at the first evaluation scoring at least this

    Returns:
        OnlineResult with the metrics stream

    Raises:
        NonFiniteError: If a loss becomes non-finite
    """
    env_rng, agent_rng, eval_rng, init_rng = rng.spawn(4)
    hyper = config.hyper
    env = make_env(config.env, config.size, env_rng, config.disable_spontaneous)
    agent = build_agent(config, env, init_rng, frozen_model)
    buffer = ReplayBuffer(hyper.buffer_size, env.observation_size)
    protocol = config.eval_protocol
    factory = lambda r: make_env(config.env, config.size, r, config.disable_spontaneous)
    sample = lambda n: buffer.sample(n, agent_rng)
    checkpoint_steps = set(checkpoint_steps)

    result = OnlineResult([], agent, 0)
    window = _LossWindow()
    total_steps = hyper.training_start + config.total_steps
    update_index = 0
    obs = env.reset()
    logger.debug(f"Online run: {config.agent_kind} on {config.env}-{config.size}, "
                 f"{total_steps} steps x {config.updates_per_step} updates")
    for env_steps in range(1, total_steps + 1):
        action = agent.act(obs, agent_rng)
        step = env.step(action)
        buffer.add(obs, action, step.reward, step.obs, step.terminal)
        obs = env.reset() if step.terminal else step.obs
        result.env_steps = env_steps
        if env_steps > hyper.training_start:
            for _ in range(config.updates_per_step):
                window.add(agent.update(sample, agent_rng))
                update_index += 1
                if update_index % protocol.eval_interval == 0:
                    score = evaluate_greedy(factory, agent.qnet, protocol, eval_rng)
                    result.metrics.append(window.row(update_index, env_steps, score))
                    logger.debug(f"update {update_index}: eval score {score:.4f}")
                    if stop_at_score is not None and score >= stop_at_score:
                        result.threshold_reached_at = env_steps
                        return result
        if env_steps in checkpoint_steps and agent.model is not None:
            result.checkpoints[env_steps] = agent.model.params.copy()
    return result


def train_offline(dataset: Sequence[Transition], agent_kind: str, rollout_length: int, steps: int,
                  rng: np.random.Generator, action_count: int, q_step_size: float = 2e-4,
                  temperature: float = 0.1, hyper: AgentHyper = AgentHyper()) -> OfflineResult:
    """
    Train on a fixed dataset.

    Model-free ("er") agents run DQN on dataset batches; "simple-model"
    agents train the model on dataset transitions and DQN on rollouts that
    start from dataset observations.

    Raises:
        EmptyBatchError: If the dataset is empty
        ValueError: For agent kinds other than "er" and "simple-model"
    """
    if len(dataset) == 0:
        raise EmptyBatchError("offline training needs a non-empty dataset")
    if agent_kind not in ("er", "simple-model"):
        raise ValueError(f"offline agents are 'er' or 'simple-model', got {agent_kind!r}")
    init_rng, agent_rng = rng.spawn(2)
    batch = TransitionBatch.from_transitions(dataset)
    obs_size = batch.obs.shape[1]
    qnet = QNetwork(obs_size, action_count, q_step_size, init_rng, hyper)
    model = SimpleDynamicsModel(obs_size, action_count, init_rng, hyper) if agent_kind == "simple-model" else None
    agent = DynaAgent(agent_kind, qnet, temperature, hyper, rollout_length, model)
    sample = lambda n: batch.take(agent_rng.integers(len(batch), size=n))
    for _ in range(steps):
        agent.update(sample, agent_rng)
    return OfflineResult(qnet, model, agent)
