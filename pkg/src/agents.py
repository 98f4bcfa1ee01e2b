"""Learners: DQN with a target network, the simple dynamics model, and rollouts.

The three agent kinds share one update routine (DynaAgent.update):

- "er": DQN on 320 replayed transitions.
- "simple-model": the model is trained on 32 replayed transitions, which
  also seed imagined rollouts; DQN trains on the imagined transitions.
- "perfect-model": like "simple-model" but rollouts step the true dynamics
  from decoded states.

Draw order within one update: replay indices, then per rollout step the
softmax draws, the next-feature draws and the termination draws.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from src.config import AgentHyper
from src.environments import Environment
from src.tensor_nn import (
    Architecture,
    MlpParams,
    NonFiniteError,
    adamw_init,
    adamw_step,
    backward,
    forward,
    loss_bernoulli_logits,
    loss_mse,
    mlp_init,
    sigmoid,
)
from src.transitions import TransitionBatch

logger = logging.getLogger(__name__)


class AgentError(Exception):
    """Base exception for agent errors."""
    pass


class EmptyBatchError(AgentError, ValueError):
    """Raised when an update receives no transitions."""
    pass


def softmax_probabilities(qvalues: np.ndarray, temperature: float) -> np.ndarray:
    """
    Softmax over the last axis at the given temperature.

    Raises:
        ValueError: If temperature is not positive
    """
    if temperature <= 0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    z = np.asarray(qvalues, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_actions(qvalues: np.ndarray, temperature: float, rng: np.random.Generator) -> np.ndarray:
    """Sample one action per row of a (batch, actions) matrix; one uniform draw per row."""
    probs = softmax_probabilities(qvalues, temperature)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    actions = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(actions, probs.shape[1] - 1)


def softmax_action(qvalues: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    return int(softmax_actions(np.asarray(qvalues)[None, :], temperature, rng)[0])


def greedy_action(qvalues: np.ndarray) -> int:
    """Argmax, ties to the lowest index."""
    return int(np.argmax(qvalues))


def _as_input(obs: np.ndarray, dtype) -> np.ndarray:
    return np.asarray(obs).astype(dtype, copy=False)


class QNetwork:
    """Action-value network with a target snapshot refreshed every `target_update_every` updates."""

    def __init__(self, observation_size: int, action_count: int, step_size: float,
                 rng: np.random.Generator, hyper: AgentHyper = AgentHyper(), dtype=np.float32):
        arch = Architecture(observation_size, (hyper.hidden_units,) * hyper.hidden_layers, (action_count,))
        self.params = mlp_init(arch, rng, dtype)
        self.target = self.params.copy()
        self.optimizer = adamw_init(self.params, step_size, hyper.adam_beta1, hyper.adam_beta2,
                                    hyper.adam_eps, hyper.weight_decay)
        self.discount = hyper.discount
        self.target_update_every = hyper.target_update_every
        self.updates = 0

    @classmethod
    def from_params(cls, params: MlpParams, step_size: float = 2e-4, hyper: AgentHyper = AgentHyper()) -> "QNetwork":
        qnet = cls.__new__(cls)
        qnet.params = params
        qnet.target = params.copy()
        qnet.optimizer = adamw_init(params, step_size, hyper.adam_beta1, hyper.adam_beta2,
                                    hyper.adam_eps, hyper.weight_decay)
        qnet.discount = hyper.discount
        qnet.target_update_every = hyper.target_update_every
        qnet.updates = 0
        return qnet

    @property
    def action_count(self) -> int:
        return self.params.arch.heads[0]

    def values(self, obs: np.ndarray) -> np.ndarray:
        (q,), _ = forward(self.params, _as_input(obs, self.params.dtype))
        return q

    def target_values(self, obs: np.ndarray) -> np.ndarray:
        (q,), _ = forward(self.target, _as_input(obs, self.params.dtype))
        return q

    def greedy(self, obs: np.ndarray) -> int:
        return greedy_action(self.values(obs))


def dqn_update(qnet: QNetwork, batch: TransitionBatch, step_size: Optional[float] = None) -> float:
    """
    One AdamW step on the mean squared 1-step TD error.

    Targets are r + discount * max_a' Q_target(s', a'), without the bootstrap
    term for terminal transitions.

    Returns:
        TD loss before the step

    Raises:
        EmptyBatchError: If the batch is empty
        NonFiniteError: If the loss or its gradient is not finite
    """
    if len(batch) == 0:
        raise EmptyBatchError("dqn_update received an empty batch")
    if step_size is not None:
        qnet.optimizer.step_size = step_size
    bootstrap = qnet.target_values(batch.next_obs).max(axis=1)
    targets = batch.rewards + qnet.discount * bootstrap * (~batch.terminals)
    (q,), cache = forward(qnet.params, _as_input(batch.obs, qnet.params.dtype))
    rows = np.arange(len(batch))
    loss = loss_mse(q[rows, batch.actions], targets)
    if not np.isfinite(loss.value):
        raise NonFiniteError(
            f"TD loss is {loss.value} at update {qnet.updates} "
            f"(max |target| {np.nanmax(np.abs(targets)):.3g}, max |Q| {np.nanmax(np.abs(q)):.3g})"
        )
    head_grad = np.zeros_like(q)
    head_grad[rows, batch.actions] = loss.grad
    grad = backward(qnet.params, cache, [head_grad])
    qnet.params, qnet.optimizer = adamw_step(qnet.params, grad, qnet.optimizer)
    qnet.updates += 1
    if qnet.updates % qnet.target_update_every == 0:
        qnet.target = qnet.params.copy()
    return loss.value


@dataclass
class ModelPrediction:
    """Batched model outputs after the sigmoid."""

    next_feature_probs: np.ndarray
    reward_mean: np.ndarray
    termination_prob: np.ndarray


@dataclass
class ModelLoss:
    observation: float
    reward: float
    termination: float

    @property
    def total(self) -> float:
        return self.observation + self.reward + self.termination


class SimpleDynamicsModel:
    """
    Feedforward model of (observation, one-hot action) with three heads:
    next-feature logits, reward mean and termination logit.
    """

    def __init__(self, observation_size: int, action_count: int, rng: np.random.Generator,
                 hyper: AgentHyper = AgentHyper(), dtype=np.float32):
        arch = Architecture(observation_size + action_count, (hyper.hidden_units,) * hyper.hidden_layers,
                            (observation_size, 1, 1))
        self.observation_size = observation_size
        self.action_count = action_count
        self.params = mlp_init(arch, rng, dtype)
        self.optimizer = adamw_init(self.params, hyper.model_step_size, hyper.adam_beta1, hyper.adam_beta2,
                                    hyper.adam_eps, hyper.weight_decay)

    @classmethod
    def from_params(cls, params: MlpParams, action_count: int, hyper: AgentHyper = AgentHyper()) -> "SimpleDynamicsModel":
        model = cls.__new__(cls)
        model.observation_size = params.arch.input_width - action_count
        model.action_count = action_count
        model.params = params
        model.optimizer = adamw_init(params, hyper.model_step_size, hyper.adam_beta1, hyper.adam_beta2,
                                     hyper.adam_eps, hyper.weight_decay)
        return model

    def inputs(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(obs)
        actions = np.atleast_1d(actions)
        one_hot = np.zeros((len(actions), self.action_count), dtype=self.params.dtype)
        one_hot[np.arange(len(actions)), actions] = 1
        return np.concatenate([_as_input(obs, self.params.dtype), one_hot], axis=1)

    def predict(self, obs: np.ndarray, actions: np.ndarray) -> ModelPrediction:
        (obs_logits, reward, term_logit), _ = forward(self.params, self.inputs(obs, actions))
        return ModelPrediction(sigmoid(obs_logits), reward[:, 0], sigmoid(term_logit[:, 0]))


def model_update(model: SimpleDynamicsModel, batch: TransitionBatch) -> ModelLoss:
    """
    One AdamW step on the summed model losses.

    Bernoulli NLL on the next-observation bits and the terminal flag, squared
    error on the reward.

    Raises:
        EmptyBatchError: If the batch is empty
        NonFiniteError: If a loss is not finite
    """
    if len(batch) == 0:
        raise EmptyBatchError("model_update received an empty batch")
    (obs_logits, reward, term_logit), cache = forward(model.params, model.inputs(batch.obs, batch.actions))
    obs_loss = loss_bernoulli_logits(obs_logits, batch.next_obs)
    reward_loss = loss_mse(reward, batch.rewards[:, None])
    term_loss = loss_bernoulli_logits(term_logit, batch.terminals[:, None])
    losses = ModelLoss(obs_loss.value, reward_loss.value, term_loss.value)
    if not np.isfinite(losses.total):
        raise NonFiniteError(f"model loss is not finite: {losses}")
    grad = backward(model.params, cache, [obs_loss.grad, reward_loss.grad, term_loss.grad])
    model.params, model.optimizer = adamw_step(model.params, grad, model.optimizer)
    return losses


def rollout(model, qnet: QNetwork, start_obs: np.ndarray, length: int, temperature: float,
            rng: np.random.Generator) -> TransitionBatch:
    """
    Imagined rollouts from each start observation.

    Actions follow the softmax policy of `qnet`; next features are sampled
    independently from the predicted probabilities; the reward is the
    predicted mean; a sampled termination ends that rollout.

    Args:
        model: Anything with predict(obs, actions) -> ModelPrediction
        qnet: Behaviour network
        start_obs: (batch, features) start observations
        length: Maximum rollout length
        temperature: Softmax temperature
        rng: Generator for every draw

    Returns:
        All imagined transitions, step by step
    """
    if length < 1:
        raise ValueError(f"rollout length must be at least 1, got {length}")
    if len(start_obs) == 0:
        raise EmptyBatchError("rollout needs at least one start observation")
    obs = np.asarray(start_obs, dtype=np.uint8)
    batches = []
    for _ in range(length):
        if len(obs) == 0:
            break
        actions = softmax_actions(qnet.values(obs), temperature, rng)
        pred = model.predict(obs, actions)
        next_obs = (rng.random(pred.next_feature_probs.shape) < pred.next_feature_probs).astype(np.uint8)
        terminals = rng.random(len(obs)) < pred.termination_prob
        batches.append(TransitionBatch(obs, actions, pred.reward_mean.astype(np.float32), next_obs, terminals))
        obs = next_obs[~terminals]
    return TransitionBatch.concatenate(batches)


def perfect_rollout(env: Environment, start_obs: np.ndarray, length: int, qnet: QNetwork,
                    temperature: float, rng: np.random.Generator) -> TransitionBatch:
    """
    Rollouts through the true dynamics, started from decoded observations.

    Raises:
        ObservationDecodeError: If a start observation encodes no valid state
    """
    if length < 1:
        raise ValueError(f"rollout length must be at least 1, got {length}")
    if len(start_obs) == 0:
        raise EmptyBatchError("rollout needs at least one start observation")
    states = [env.state_from_observation(o) for o in start_obs]
    obs = np.asarray(start_obs, dtype=np.uint8)
    batches = []
    for _ in range(length):
        if not states:
            break
        actions = softmax_actions(qnet.values(obs), temperature, rng)
        outcomes = [env.transition(s, int(a), rng) for s, a in zip(states, actions)]
        next_obs = np.stack([env.encode(o.state) for o in outcomes]).astype(np.uint8)
        rewards = np.array([o.reward for o in outcomes], dtype=np.float32)
        terminals = np.array([o.terminal for o in outcomes], dtype=bool)
        batches.append(TransitionBatch(obs, actions, rewards, next_obs, terminals))
        states = [o.state for o in outcomes if not o.terminal]
        obs = next_obs[~terminals]
    return TransitionBatch.concatenate(batches)


@dataclass
class BudgetCounter:
    """Transitions consumed by each DQN update."""

    updates: int = 0
    total: int = 0
    minimum: Optional[int] = None
    maximum: Optional[int] = None

    def record(self, consumed: int) -> None:
        self.updates += 1
        self.total += consumed
        self.minimum = consumed if self.minimum is None else min(self.minimum, consumed)
        self.maximum = consumed if self.maximum is None else max(self.maximum, consumed)


@dataclass
class UpdateStats:
    td_loss: float
    model_loss: Optional[ModelLoss]
    consumed: int


@dataclass
class DynaAgent:
    """
    One agent kind wired to its networks.

    `sample(n)` must return n real transitions; it is the replay buffer
    online and the fixed dataset offline. A frozen model is used for
    rollouts but never trained.
    """

    kind: str
    qnet: QNetwork
    temperature: float
    hyper: AgentHyper
    rollout_length: int = 10
    model: Optional[SimpleDynamicsModel] = None
    env: Optional[Environment] = None
    frozen_model: bool = False
    budget: BudgetCounter = field(default_factory=BudgetCounter)

    def __post_init__(self):
        if self.kind == "simple-model" and self.model is None:
            raise AgentError("simple-model agent needs a dynamics model")
        if self.kind == "perfect-model" and self.env is None:
            raise AgentError("perfect-model agent needs the environment dynamics")

    @property
    def start_count(self) -> int:
        """Rollout starts per update; 32 for length 10, 320 for length 1."""
        return max(1, self.hyper.model_free_batch // self.rollout_length)

    def act(self, obs: np.ndarray, rng: np.random.Generator) -> int:
        return softmax_action(self.qnet.values(obs), self.temperature, rng)

    def update(self, sample: Callable[[int], TransitionBatch], rng: np.random.Generator) -> UpdateStats:
        model_loss = None
        if self.kind == "er":
            batch = sample(self.hyper.model_free_batch)
        else:
            starts = sample(self.start_count)
            if self.kind == "perfect-model":
                batch = perfect_rollout(self.env, starts.obs, self.rollout_length, self.qnet, self.temperature, rng)
            else:
                if not self.frozen_model:
                    model_loss = model_update(self.model, starts.take(slice(0, self.hyper.rollout_batch)))
                batch = rollout(self.model, self.qnet, starts.obs, self.rollout_length, self.temperature, rng)
        td_loss = dqn_update(self.qnet, batch)
        self.budget.record(len(batch))
        return UpdateStats(td_loss, model_loss, len(batch))
