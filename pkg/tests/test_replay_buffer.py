"""Tests for replay_buffer module."""

import numpy as np
import pytest
from scipy import stats

from src.replay_buffer import ReplayBuffer


def add_numbered(buffer, count):
    for i in range(count):
        obs = np.array([i % 2, 1 - i % 2], dtype=np.uint8)
        buffer.add(obs, i, float(i), obs, i % 3 == 0)


class TestReplayBuffer:
    """Tests for ReplayBuffer."""

    def test_fills_up_to_capacity(self):
        """Test size and insertion count."""
        buffer = ReplayBuffer(3, 2)
        add_numbered(buffer, 5)
        assert len(buffer) == 3
        assert buffer.inserted == 5

    def test_overwrites_oldest(self):
        """Test that the oldest entries are replaced first."""
        buffer = ReplayBuffer(3, 2)
        add_numbered(buffer, 5)
        assert buffer.contents().actions.tolist() == [2, 3, 4]

    def test_contents_before_full(self):
        """Test contents of a partly filled buffer."""
        buffer = ReplayBuffer(10, 2)
        add_numbered(buffer, 4)
        contents = buffer.contents()
        assert contents.actions.tolist() == [0, 1, 2, 3]
        assert contents.terminals.tolist() == [True, False, False, True]

    def test_sample_shape(self):
        """Test that sampling is with replacement and keeps fields aligned."""
        buffer = ReplayBuffer(4, 2)
        add_numbered(buffer, 2)
        batch = buffer.sample(320, np.random.default_rng(0))
        assert len(batch) == 320
        assert set(batch.actions.tolist()) == {0, 1}
        assert np.array_equal(batch.rewards, batch.actions.astype(np.float32))

    def test_sample_empty(self):
        """Test that sampling an empty buffer raises."""
        with pytest.raises(ValueError):
            ReplayBuffer(4, 2).sample(1, np.random.default_rng(0))

    def test_sample_uniform_over_contents(self):
        """Test that every stored transition is drawn equally often and evicted ones never."""
        buffer = ReplayBuffer(10, 2)
        add_numbered(buffer, 14)
        actions = buffer.sample(100_000, np.random.default_rng(5)).actions
        assert set(actions.tolist()) == set(range(4, 14))
        counts = np.bincount(actions - 4, minlength=10)
        assert stats.chisquare(counts).pvalue > 0.001

    def test_invalid_capacity(self):
        """Test that capacity must be positive."""
        with pytest.raises(ValueError):
            ReplayBuffer(0, 2)
