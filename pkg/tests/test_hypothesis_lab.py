"""Tests for hypothesis_lab module."""

import numpy as np
import pytest

from src.config import ConfigError
from src.exact_mdp import TERMINAL, UnknownStateError, solve_optimal_q
from src.hypothesis_lab import (
    Dataset,
    EnumerationLimitError,
    FactoredFamily,
    FixedAction,
    InconsistentDatasetError,
    TabularFamily,
    bad_action_value,
    build_counterexample,
    build_extended_example,
    build_tabular_family,
    compute_HB,
    compute_HM,
    compute_HQ,
    counterexample_report,
    enumerate_models,
    extended_bad_action_value,
    extended_report,
    fuzz_subset,
    load_family_file,
    random_factored_family,
    reset_model_index,
    sample_dataset,
    tabular_report,
    toggle_model_index,
    verify_theorem,
)


@pytest.fixture(scope="module")
def counterexample():
    """The factored family and its six-transition dataset."""
    return build_counterexample()


@pytest.fixture(scope="module")
def counterexample_result(counterexample):
    """verify_theorem on the counterexample, computed once."""
    family, dataset = counterexample
    return verify_theorem(family, dataset)


@pytest.fixture
def small_family():
    """A family small enough to enumerate in every test."""
    return FactoredFamily(countdown_max=1, bit_count=1, action_count=2)


class TestFactoredFamily:
    """Tests for the factored family enumeration."""

    def test_counterexample_size(self, counterexample):
        """Test that each bit has 2^6 update rules with three free actions."""
        family, _ = counterexample
        assert family.model_count == 64 ** 2

    def test_enumerates_each_model_once(self, small_family):
        """Test that every transition function appears exactly once."""
        tables = [tuple(sorted(m.next_state.items())) for m in enumerate_models(small_family)]
        assert len(tables) == small_family.model_count
        assert len(set(tables)) == len(tables)

    def test_toggle_model_dynamics(self, counterexample):
        """Test that action i toggles bit i in the toggle model."""
        family, _ = counterexample
        index = toggle_model_index(family)
        assert family.successor(index, (2, 0, 0), 0) == (1, 1, 0)
        assert family.successor(index, (2, 0, 0), 1) == (1, 0, 1)
        assert family.successor(index, (2, 1, 1), 2) == (1, 1, 1)

    def test_reset_model_clears_bits(self, counterexample):
        """Test the reset model sends every bit to zero."""
        family, _ = counterexample
        index = reset_model_index(family)
        assert family.successor(index, (2, 1, 1), 0) == (1, 0, 0)

    def test_countdown_zero_terminates(self, counterexample):
        """Test that the step at countdown 0 ends the episode."""
        family, _ = counterexample
        assert family.successor(0, (0, 1, 0), 1) == TERMINAL

    def test_fixed_action(self):
        """Test that a fixed action sets its bits and pays its reward."""
        family = FactoredFamily(1, 2, 2, (FixedAction(1, (1, 1), -1),))
        assert family.free_actions == (0,)
        assert family.successor(0, (1, 0, 0), 1) == (0, 1, 1)
        assert family.reward((1, 0, 0), 1) == -1

    def test_invalid_family(self):
        """Test that a family needs at least one bit."""
        with pytest.raises(ValueError):
            FactoredFamily(countdown_max=1, bit_count=0, action_count=1)

    def test_enumeration_limit(self):
        """Test that oversized families are refused."""
        family = FactoredFamily(countdown_max=1, bit_count=5, action_count=3)
        with pytest.raises(EnumerationLimitError):
            next(enumerate_models(family))


class TestTabularFamily:
    """Tests for the countdown-preserving tabular family."""

    def test_size(self):
        """Test that 4 free pairs with 2 successors each give 16 models."""
        assert build_tabular_family().model_count == 16

    def test_successors_keep_countdown(self):
        """Test that every successor decrements the countdown."""
        family = build_tabular_family()
        for index in range(family.model_count):
            assert family.successor(index, (1, 0), 0)[0] == 0


class TestHypothesisClasses:
    """Tests for H_Q, H_B(D) and H_M(D)."""

    def test_empty_dataset_leaves_classes_equal(self, small_family):
        """Test that with no data H_M = H_B = H_Q."""
        empty = Dataset()
        hq = compute_HQ(small_family)
        assert compute_HB(small_family, empty) == hq
        assert compute_HM(small_family, empty) == hq

    def test_counterexample_singleton(self, counterexample):
        """Test that the six transitions pin H_M down to q*."""
        family, dataset = counterexample
        hm = compute_HM(family, dataset)
        q_star = solve_optimal_q(family.model(toggle_model_index(family)))
        assert hm == {q_star}

    def test_monotone_in_data(self, counterexample):
        """Test that adding transitions shrinks both classes."""
        family, dataset = counterexample
        smaller = Dataset(dataset.transitions[:3])
        assert compute_HB(family, dataset) <= compute_HB(family, smaller)
        assert compute_HM(family, dataset) <= compute_HM(family, smaller)

    @pytest.mark.parametrize("seed", range(20))
    def test_monotone_random_families(self, seed):
        """Test that a longer dataset never grows H_B or H_M on random families."""
        rng = np.random.default_rng(seed)
        family = random_factored_family(rng)
        pair_count = len(family.states()) * family.action_count
        dataset = sample_dataset(family, int(rng.integers(family.model_count)), pair_count, rng)
        cut = int(rng.integers(0, len(dataset) + 1))
        smaller = Dataset(dataset.transitions[:cut])
        assert compute_HB(family, dataset) <= compute_HB(family, smaller)
        assert compute_HM(family, dataset) <= compute_HM(family, smaller)
        assert compute_HM(family, dataset) <= compute_HB(family, dataset)

    def test_inconsistent_dataset_gives_empty_hm(self, small_family, caplog):
        """Test that contradictory data empties H_M and logs a warning."""
        dataset = Dataset((((1, 0), 0, (0, 0)), ((1, 0), 0, (0, 1))))
        assert compute_HM(small_family, dataset) == set()
        assert "consistent" in caplog.text

    def test_validate_inconsistent(self, small_family):
        """Test that validate raises for data no model reproduces."""
        dataset = Dataset((((1, 0), 0, (0, 0)), ((1, 0), 0, (0, 1))))
        with pytest.raises(InconsistentDatasetError):
            dataset.validate(small_family)

    def test_unknown_state(self, small_family):
        """Test that datasets mentioning unknown states are rejected."""
        with pytest.raises(UnknownStateError):
            compute_HB(small_family, Dataset((((5, 0), 0, (4, 0)),)))


class TestVerifyTheorem:
    """Tests for verify_theorem on the fixed instances."""

    def test_strict_subset(self, counterexample_result):
        """Test that H_M is a strict subset of H_B on the counterexample."""
        assert counterexample_result.hm_size == 1
        assert counterexample_result.subset_holds
        assert counterexample_result.strict
        assert counterexample_result.witness_count == counterexample_result.hb_size - 1

    def test_bad_action_value_is_a_witness(self, counterexample, counterexample_result):
        """Test that the pessimistic value function is listed first."""
        family, _ = counterexample
        assert counterexample_result.witnesses[0] == bad_action_value(family)

    def test_suboptimal_witnesses_counted(self, counterexample_result):
        """Test that witness policies are graded when H_M is a singleton."""
        assert counterexample_result.suboptimal_witness_count is not None
        assert counterexample_result.suboptimal_witness_count <= counterexample_result.witness_count

    def test_extended_instance(self):
        """Test that the known costly action keeps the inclusion strict."""
        family, dataset = build_extended_example()
        report = verify_theorem(family, dataset)
        assert report.hm_size == 1
        assert report.strict
        assert report.witnesses[0] == extended_bad_action_value(family)

    def test_tabular_equality(self):
        """Test that H_M = H_B on datasets drawn from tabular members."""
        family = build_tabular_family()
        rng = np.random.default_rng(3)
        for _ in range(20):
            member = int(rng.integers(family.model_count))
            dataset = sample_dataset(family, member, int(rng.integers(0, 5)), rng)
            report = verify_theorem(family, dataset)
            assert report.hb_size == report.hm_size
            assert report.equality_required

    def test_inconsistent_factored_dataset(self, small_family):
        """Test that data no member reproduces is rejected instead of reported."""
        dataset = Dataset((((1, 0), 0, (0, 0)), ((1, 0), 0, (0, 1))))
        with pytest.raises(InconsistentDatasetError):
            verify_theorem(small_family, dataset)

    def test_inconsistent_tabular_dataset(self):
        """Test that a tabular dataset keeping the countdown is bad input, not a broken theorem."""
        family = TabularFamily(countdown_max=1, bit_count=1, action_count=2)
        with pytest.raises(InconsistentDatasetError):
            verify_theorem(family, Dataset((((1, 0), 0, (1, 1)),)))

    def test_report_dict(self, counterexample_result):
        """Test the serialized report fields."""
        data = counterexample_result.to_dict()
        assert data["H_M"] == 1
        assert data["strict"] is True
        assert len(data["H_M_members"]) == 1
        assert data["suboptimal_witness_count"] == counterexample_result.suboptimal_witness_count


class TestReports:
    """Tests for the ready-made reports."""

    def test_counterexample_report(self):
        """Test that q_hat is Bellman consistent but not model consistent."""
        report = counterexample_report()
        assert report["q_hat_in_H_B"] is True
        assert report["q_hat_in_H_M"] is False
        assert report["q_hat_first_witness"] is True

    def test_extended_report(self):
        """Test the extended instance report."""
        report = extended_report()
        assert report["q_hat_in_H_B"] is True
        assert report["q_hat_in_H_M"] is False

    def test_tabular_report(self):
        """Test the tabular report records one entry per dataset."""
        report = tabular_report(5, np.random.default_rng(0))
        assert report["all_equal"] is True
        assert len(report["classes"]) == 5
        assert all(c["H_B"] == c["H_M"] for c in report["classes"])


class TestFuzzSubset:
    """Tests for randomized subset checks."""

    def test_small_fuzz(self):
        """Test a handful of random families."""
        assert fuzz_subset(10, np.random.default_rng(1)) == 10

    @pytest.mark.slow
    def test_fuzz_500_cases(self):
        """Test the subset relation on 500 random families."""
        assert fuzz_subset(500, np.random.default_rng(2024)) == 500


class TestLoadFamilyFile:
    """Tests for the family file format."""

    def test_load(self, tmp_path):
        """Test loading a factored family with a fixed action and data."""
        path = tmp_path / "family.cfg"
        path.write_text(
            "family = factored\n"
            "countdown_max = 1\n"
            "bit_count = 1\n"
            "action_count = 2\n"
            "fixed_action = 1:1:-1\n"
            "transition = 1,0 0 0,1\n"
            "transition = 0,1 0 T\n"
        )
        family, dataset = load_family_file(path)
        assert isinstance(family, FactoredFamily)
        assert family.fixed_actions == (FixedAction(1, (1,), -1),)
        assert dataset.transitions[1] == ((0, 1), 0, TERMINAL)

    def test_tabular(self, tmp_path):
        """Test selecting the tabular family."""
        path = tmp_path / "family.cfg"
        path.write_text("family = tabular\ncountdown_max = 1\nbit_count = 1\naction_count = 2\n")
        family, dataset = load_family_file(path)
        assert isinstance(family, TabularFamily)
        assert len(dataset) == 0

    @pytest.mark.parametrize("family_kind", ["factored", "tabular"])
    def test_inconsistent_transitions(self, tmp_path, family_kind):
        """Test that transitions no member reproduces are rejected on load."""
        path = tmp_path / "family.cfg"
        path.write_text(
            f"family = {family_kind}\ncountdown_max = 1\nbit_count = 1\naction_count = 2\n"
            "transition = 1,0 0 1,1\n"
        )
        with pytest.raises(InconsistentDatasetError):
            load_family_file(path)

    @pytest.mark.parametrize("line", [
        "colour = blue",
        "family = cyclic",
        "transition = 1,0 zero 0,1",
        "fixed_action = 1:1",
    ])
    def test_bad_lines(self, tmp_path, line):
        """Test that unknown keys and malformed values raise ConfigError."""
        path = tmp_path / "family.cfg"
        path.write_text(f"countdown_max = 1\nbit_count = 1\naction_count = 2\n{line}\n")
        with pytest.raises(ConfigError):
            load_family_file(path)
