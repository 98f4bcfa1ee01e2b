"""Tests for transitions module."""

import numpy as np
import pytest

from src.transitions import DATASET_HEADER, Transition, TransitionBatch, read_dataset, write_dataset


@pytest.fixture
def sample_transitions():
    """Three small transitions with distinct fields."""
    return [
        Transition(np.array([1, 0, 0], dtype=np.uint8), 0, -1.0, np.array([0, 1, 0], dtype=np.uint8), False),
        Transition(np.array([0, 1, 0], dtype=np.uint8), 2, 0.25, np.array([0, 0, 1], dtype=np.uint8), False),
        Transition(np.array([0, 0, 1], dtype=np.uint8), 1, 1.0, np.array([0, 0, 0], dtype=np.uint8), True),
    ]


class TestTransition:
    """Tests for Transition equality."""

    def test_equal_by_value(self, sample_transitions):
        """Test that copies with equal arrays compare and hash equal."""
        t = sample_transitions[0]
        copy = Transition(t.obs.copy(), t.action, t.reward, t.next_obs.copy(), t.terminal)
        assert t == copy
        assert hash(t) == hash(copy)

    def test_differs_by_observation(self, sample_transitions):
        """Test that a different observation makes transitions unequal."""
        a, b = sample_transitions[:2]
        assert a != Transition(b.obs, a.action, a.reward, a.next_obs, a.terminal)


class TestTransitionBatch:
    """Tests for TransitionBatch."""

    def test_from_transitions(self, sample_transitions):
        """Test stacking and dtypes."""
        batch = TransitionBatch.from_transitions(sample_transitions)
        assert len(batch) == 3
        assert batch.obs.shape == (3, 3)
        assert batch.obs.dtype == np.uint8
        assert batch.actions.dtype == np.int64
        assert batch.rewards.dtype == np.float32
        assert batch.terminals.tolist() == [False, False, True]

    def test_concatenate_and_take(self, sample_transitions):
        """Test concatenation then indexing."""
        batch = TransitionBatch.from_transitions(sample_transitions)
        joined = TransitionBatch.concatenate([batch, batch.take([2])])
        assert len(joined) == 4
        assert joined.actions.tolist() == [0, 2, 1, 1]

    def test_to_transitions(self, sample_transitions):
        """Test unstacking gives back equal records."""
        batch = TransitionBatch.from_transitions(sample_transitions)
        assert batch.to_transitions() == sample_transitions


class TestDatasetFiles:
    """Tests for the CSV dataset format."""

    def test_write_then_read(self, tmp_path, sample_transitions):
        """Test that records survive a file round trip."""
        path = tmp_path / "dataset.csv"
        assert write_dataset(path, sample_transitions) == 3
        assert read_dataset(path) == sample_transitions

    def test_header_and_bits(self, tmp_path, sample_transitions):
        """Test the on-disk layout."""
        path = tmp_path / "dataset.csv"
        write_dataset(path, sample_transitions[:1])
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(DATASET_HEADER)
        assert lines[1] == "100,0,-1.0,010,0"

    @pytest.mark.parametrize("row", ["100,0,-1.0,010", "1x0,0,-1.0,010,0", "100,up,-1.0,010,0"])
    def test_malformed(self, tmp_path, row):
        """Test that malformed rows raise ValueError."""
        path = tmp_path / "bad.csv"
        path.write_text(",".join(DATASET_HEADER) + "\n" + row + "\n")
        with pytest.raises(ValueError):
            read_dataset(path)
