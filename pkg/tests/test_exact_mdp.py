"""Tests for exact_mdp module."""

import pytest

from src.exact_mdp import (
    TERMINAL,
    ExplicitMDP,
    MDPError,
    MDPFormatError,
    NonEpisodicError,
    QFunction,
    UnknownStateError,
    bellman_consistent,
    build_horizon_mdp,
    greedy_actions,
    load_mdp_file,
    parse_mdp_text,
    solve_optimal_q,
)
from src.hypothesis_lab import build_counterexample, toggle_model_index

CHAIN_TEXT = """
# two-step chain
terminal END
actions 2
s0 0 s1 0
s0 1 END 1
s1 0 END 0
s1 1 END 2
"""


@pytest.fixture
def chain():
    """Two-state chain where delaying the reward pays more."""
    return parse_mdp_text(CHAIN_TEXT)


@pytest.fixture
def toggle_mdp():
    """The counterexample family's true toggle model."""
    family, _ = build_counterexample()
    return family.model(toggle_model_index(family))


class TestExplicitMDP:
    """Tests for ExplicitMDP validation."""

    def test_topological_order_puts_successors_first(self, chain):
        """Test that s1 is solved before s0."""
        assert chain.topological_order == ("s1", "s0")

    def test_step(self, chain):
        """Test deterministic step returns successor and reward."""
        assert chain.step("s0", 0) == ("s1", 0)
        assert chain.step("s1", 1) == ("END", 2)

    def test_step_unknown_state(self, chain):
        """Test stepping from an unknown state raises."""
        with pytest.raises(UnknownStateError):
            chain.step("nowhere", 0)

    def test_cycle_rejected(self):
        """Test that a nonterminal cycle is rejected at construction."""
        with pytest.raises(NonEpisodicError) as exc:
            parse_mdp_text("terminal T\na 0 b 0\nb 0 a 0\n")
        assert "a" in exc.value.cycle and "b" in exc.value.cycle

    def test_self_loop_rejected(self):
        """Test that a self loop is a cycle too."""
        with pytest.raises(NonEpisodicError):
            ExplicitMDP(("s",), 1, {("s", 0): "s"}, {("s", 0): 0})

    def test_missing_successor(self):
        """Test that every action needs a successor."""
        with pytest.raises(MDPError):
            ExplicitMDP(("s",), 2, {("s", 0): TERMINAL}, {("s", 0): 0, ("s", 1): 0})

    def test_unknown_successor(self):
        """Test that successors must be known states."""
        with pytest.raises(UnknownStateError):
            ExplicitMDP(("s",), 1, {("s", 0): "x"}, {("s", 0): 0})

    def test_non_integer_reward(self):
        """Test that fractional rewards are rejected."""
        with pytest.raises(MDPError):
            ExplicitMDP(("s",), 1, {("s", 0): TERMINAL}, {("s", 0): 0.5})

    def test_transitions_lists_every_pair(self, chain):
        """Test that transitions() yields one triple per state-action pair."""
        assert len(list(chain.transitions())) == 4


class TestSolveOptimalQ:
    """Tests for backward induction."""

    def test_chain_values(self, chain):
        """Test the hand-computed chain values."""
        q = solve_optimal_q(chain)
        assert q.value("s1", 0) == 0
        assert q.value("s1", 1) == 2
        assert q.value("s0", 0) == 2
        assert q.value("s0", 1) == 1

    def test_terminal_value_is_zero(self, chain):
        """Test that the terminal state has value zero for every action."""
        q = solve_optimal_q(chain)
        assert q.value("END", 0) == 0
        assert q.max_value("END") == 0

    def test_toggle_model_start_value(self, toggle_mdp):
        """Test that toggling both bits from (2,0,0) collects the reward."""
        q = solve_optimal_q(toggle_mdp)
        assert q.value((2, 0, 0), 0) == 1

    def test_rewarding_state_pays_every_action(self, toggle_mdp):
        """Test that every action at (0,1,1) has value 1."""
        q = solve_optimal_q(toggle_mdp)
        assert [q.value((0, 1, 1), a) for a in range(3)] == [1, 1, 1]

    def test_greedy_keeps_ties(self, toggle_mdp):
        """Test that both toggle orders are optimal at the start."""
        q = solve_optimal_q(toggle_mdp)
        assert greedy_actions(q, (2, 0, 0)) == frozenset({0, 1})

    def test_greedy_at_terminal_raises(self, chain):
        """Test that greedy actions are undefined at the terminal state."""
        q = solve_optimal_q(chain)
        with pytest.raises(ValueError):
            greedy_actions(q, "END")


class TestQFunction:
    """Tests for QFunction equality and lookup."""

    def test_equal_tables_hash_equal(self):
        """Test that equal tables are interchangeable set members."""
        a = QFunction(("s",), 2, ((1, 2),))
        b = QFunction.from_function(("s",), 2, lambda s, act: act + 1)
        assert a == b
        assert len({a, b}) == 1

    def test_unknown_state(self):
        """Test lookup of an unknown state raises."""
        q = QFunction(("s",), 1, ((0,),))
        with pytest.raises(UnknownStateError):
            q.value("x", 0)

    def test_row_width_checked(self):
        """Test that rows must have one entry per action."""
        with pytest.raises(MDPError):
            QFunction(("s",), 2, ((0,),))

    def test_total(self):
        """Test total sums the table."""
        assert QFunction(("a", "b"), 2, ((1, 2), (3, -1))).total() == 5


class TestBellmanConsistent:
    """Tests for bellman_consistent."""

    def test_optimal_q_is_consistent_everywhere(self, chain):
        """Test that q* satisfies the equation on all transitions."""
        q = solve_optimal_q(chain)
        assert bellman_consistent(q, chain.reward, chain.transitions())

    def test_empty_transitions_always_consistent(self):
        """Test that an empty dataset is vacuously consistent."""
        q = QFunction(("s",), 1, ((42,),))
        assert bellman_consistent(q, {("s", 0): 0}, [])

    def test_detects_violation(self, chain):
        """Test that a wrong value is detected."""
        q = QFunction(("s0", "s1"), 2, ((2, 1), (0, 3)), "END")
        assert not bellman_consistent(q, chain.reward, [("s1", 1, "END")])

    def test_callable_reward(self):
        """Test reward given as a callable."""
        q = QFunction(("s",), 1, ((5,),))
        assert bellman_consistent(q, lambda s, a: 5, [("s", 0, TERMINAL)])

    def test_unknown_state_raises(self):
        """Test that an unknown state in a transition raises."""
        q = QFunction(("s",), 1, ((0,),))
        with pytest.raises(UnknownStateError):
            bellman_consistent(q, lambda s, a: 0, [("s", 0, "x")])


class TestBuildHorizonMDP:
    """Tests for build_horizon_mdp."""

    def test_looping_task_becomes_episodic(self):
        """Test that a task which can loop forever gets a countdown."""
        # two cells; action 0 stays, action 1 moves to the goal
        def step(cell, action):
            if action == 1:
                return "goal", 0, True
            return cell, -1, False

        mdp = build_horizon_mdp(["a"], 2, step, horizon=3)
        q = solve_optimal_q(mdp)
        assert greedy_actions(q, (3, "a")) == frozenset({1})
        assert q.value((3, "a"), 0) == -1


class TestParseMdpText:
    """Tests for the plain-text MDP format."""

    def test_inferred_action_count(self):
        """Test that the action count is inferred without an actions line."""
        mdp = parse_mdp_text("terminal T\ns 0 T 1\ns 1 T 0\n")
        assert mdp.action_count == 2

    @pytest.mark.parametrize("text", [
        "s 0 T 1\n",
        "terminal T\n",
        "terminal T\ns 0 T\n",
        "terminal T\ns x T 1\n",
        "terminal T\ns 0 T 1\ns 0 T 2\n",
        "terminal T\nT 0 T 1\n",
    ])
    def test_malformed(self, text):
        """Test malformed descriptions raise MDPFormatError."""
        with pytest.raises(MDPFormatError):
            parse_mdp_text(text)

    def test_load_file(self, tmp_path):
        """Test loading from a file."""
        path = tmp_path / "chain.mdp"
        path.write_text(CHAIN_TEXT)
        mdp = load_mdp_file(path)
        assert mdp.states == ("s0", "s1")
        assert mdp.terminal == "END"
