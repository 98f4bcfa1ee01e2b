"""Ring-buffer experience replay over preallocated numpy arrays."""

import numpy as np

from src.transitions import Transition, TransitionBatch


class ReplayBuffer:
    """
    Fixed-capacity store of transitions; the oldest entry is overwritten
    once the buffer is full. Sampling is uniform with replacement.
    """

    def __init__(self, capacity: int, observation_size: int):
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.obs = np.zeros((capacity, observation_size), dtype=np.uint8)
        self.next_obs = np.zeros((capacity, observation_size), dtype=np.uint8)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.terminals = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0
        self.inserted = 0

    def __len__(self) -> int:
        return self._size

    def add(self, obs: np.ndarray, action: int, reward: float, next_obs: np.ndarray, terminal: bool) -> None:
        i = self._next
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminals[i] = terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.inserted += 1

    def add_transition(self, t: Transition) -> None:
        self.add(t.obs, t.action, t.reward, t.next_obs, t.terminal)

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """
        Draw `batch_size` stored transitions uniformly at random.

        Raises:
            ValueError: If the buffer is empty
        """
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(self._size, size=batch_size)
        return TransitionBatch(
            self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.terminals[idx],
        )

    def contents(self) -> TransitionBatch:
        """Stored transitions, oldest first."""
        if self._size < self.capacity:
            order = np.arange(self._size)
        else:
            order = (np.arange(self.capacity) + self._next) % self.capacity
        return TransitionBatch(
            self.obs[order], self.actions[order], self.rewards[order], self.next_obs[order], self.terminals[order],
        )
