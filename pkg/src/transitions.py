"""Transitions and batches of transitions.

A Transition is one (observation, action, reward, next observation, terminal)
record. Learners consume TransitionBatch objects, which hold the same fields
as stacked numpy arrays.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

DATASET_HEADER = ("obs_bits", "action", "reward", "next_obs_bits", "terminal")


@dataclass(frozen=True, eq=False)
class Transition:
    """One environment (or imagined) step."""

    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    terminal: bool

    def __eq__(self, other) -> bool:
        if not isinstance(other, Transition):
            return NotImplemented
        return (
            self.action == other.action
            and self.reward == other.reward
            and self.terminal == other.terminal
            and np.array_equal(self.obs, other.obs)
            and np.array_equal(self.next_obs, other.next_obs)
        )

    def __hash__(self) -> int:
        return hash((self.obs.tobytes(), self.action, self.reward, self.next_obs.tobytes(), self.terminal))


@dataclass
class TransitionBatch:
    """Transitions stacked along a leading batch axis."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "TransitionBatch":
        return cls(
            obs=np.stack([t.obs for t in transitions]).astype(np.uint8),
            actions=np.array([t.action for t in transitions], dtype=np.int64),
            rewards=np.array([t.reward for t in transitions], dtype=np.float32),
            next_obs=np.stack([t.next_obs for t in transitions]).astype(np.uint8),
            terminals=np.array([t.terminal for t in transitions], dtype=bool),
        )

    @classmethod
    def concatenate(cls, batches: Sequence["TransitionBatch"]) -> "TransitionBatch":
        return cls(
            obs=np.concatenate([b.obs for b in batches]),
            actions=np.concatenate([b.actions for b in batches]),
            rewards=np.concatenate([b.rewards for b in batches]),
            next_obs=np.concatenate([b.next_obs for b in batches]),
            terminals=np.concatenate([b.terminals for b in batches]),
        )

    def take(self, indices) -> "TransitionBatch":
        return TransitionBatch(
            self.obs[indices], self.actions[indices], self.rewards[indices],
            self.next_obs[indices], self.terminals[indices],
        )

    def to_transitions(self) -> list[Transition]:
        return [
            Transition(self.obs[i], int(self.actions[i]), float(self.rewards[i]),
                       self.next_obs[i], bool(self.terminals[i]))
            for i in range(len(self))
        ]


def _bits(values: np.ndarray) -> str:
    return "".join("1" if v else "0" for v in values)


def _parse_bits(text: str) -> np.ndarray:
    if text and set(text) - {"0", "1"}:
        raise ValueError(f"not a bit string: {text!r}")
    return np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0")


def write_dataset(path: Union[str, Path], transitions: Iterable[Transition]) -> int:
    """
    Write transitions as `obs_bits,action,reward,next_obs_bits,terminal` rows.

    Args:
        path: Output file
        transitions: Records to write

    Returns:
        Number of records written
    """
    count = 0
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(DATASET_HEADER)
        for t in transitions:
            writer.writerow([_bits(t.obs), t.action, repr(float(t.reward)), _bits(t.next_obs), int(t.terminal)])
            count += 1
    logger.info(f"Wrote {count} transitions to {path}")
    return count


def read_dataset(path: Union[str, Path]) -> list[Transition]:
    """
    Read a dataset written by write_dataset.

    Raises:
        ValueError: If a record is malformed
    """
    records = []
    with open(path, newline="") as handle:
        for lineno, row in enumerate(csv.reader(handle), start=1):
            if not row or tuple(row) == DATASET_HEADER:
                continue
            if len(row) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            obs, action, reward, next_obs, terminal = row
            records.append(Transition(
                _parse_bits(obs), int(action), float(reward), _parse_bits(next_obs), terminal == "1",
            ))
    return records
