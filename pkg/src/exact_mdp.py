"""Exact representation and solution of small deterministic episodic MDPs.

Everything in this module works in integer arithmetic so that action-value
functions can be compared, hashed and collected into sets without any
floating point noise. MDPs are validated eagerly: a table in which some
policy can loop forever among nonterminal states is rejected at
construction time.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Iterable, Iterator, Mapping, Optional, Union

logger = logging.getLogger(__name__)

# Designated terminal state shared by every MDP built in this package.
TERMINAL = "⊥"

State = Hashable
Transition = tuple[State, int, State]
RewardTable = Union[Mapping[tuple[State, int], int], Callable[[State, int], int]]


class MDPError(Exception):
    """Base exception for explicit MDP errors."""
    pass


class NonEpisodicError(MDPError):
    """Raised when some policy can avoid the terminal state forever."""

    def __init__(self, cycle: list):
        self.cycle = cycle
        path = " -> ".join(repr(s) for s in cycle)
        super().__init__(f"MDP is not episodic, nonterminal cycle: {path}")


class UnknownStateError(MDPError):
    """Raised when a state id is not part of the MDP or Q-function."""
    pass


class MDPFormatError(MDPError):
    """Raised when a plain-text MDP description cannot be parsed."""
    pass


def _check_integer(value, what: str) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise MDPError(f"{what} must be an integer, got {value!r}")
    return int(value)


@dataclass(frozen=True, eq=False)
class ExplicitMDP:
    """
    A finite deterministic episodic MDP given by explicit tables.

    Attributes:
        states: Nonterminal state ids in canonical order
        action_count: Number of actions, available in every nonterminal state
        next_state: Mapping (state, action) -> successor (may be TERMINAL)
        reward: Mapping (state, action) -> integer reward
        terminal: The designated terminal state id
    """

    states: tuple
    action_count: int
    next_state: Mapping[tuple[State, int], State]
    reward: Mapping[tuple[State, int], int]
    terminal: State = TERMINAL
    _order: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.action_count < 1:
            raise MDPError(f"action_count must be positive, got {self.action_count}")
        known = set(self.states)
        if len(known) != len(self.states):
            raise MDPError("duplicate state ids")
        if self.terminal in known:
            raise MDPError(f"terminal state {self.terminal!r} listed as nonterminal")

        for s in self.states:
            for a in range(self.action_count):
                if (s, a) not in self.next_state:
                    raise MDPError(f"missing successor for state {s!r}, action {a}")
                if (s, a) not in self.reward:
                    raise MDPError(f"missing reward for state {s!r}, action {a}")
                successor = self.next_state[(s, a)]
                if successor != self.terminal and successor not in known:
                    raise UnknownStateError(
                        f"successor {successor!r} of ({s!r}, {a}) is not a known state"
                    )
                _check_integer(self.reward[(s, a)], f"reward of ({s!r}, {a})")

        object.__setattr__(self, "_order", self._topological_order())

    def _topological_order(self) -> tuple:
        """Order nonterminal states so that every successor precedes its predecessors.

        Raises:
            NonEpisodicError: If the transition graph has a nonterminal cycle
        """
        white, grey, black = 0, 1, 2
        colour = {s: white for s in self.states}
        order = []

        for root in self.states:
            if colour[root] != white:
                continue
            colour[root] = grey
            stack = [(root, 0)]
            while stack:
                node, action = stack[-1]
                if action == self.action_count:
                    stack.pop()
                    colour[node] = black
                    order.append(node)
                    continue
                stack[-1] = (node, action + 1)
                child = self.next_state[(node, action)]
                if child == self.terminal:
                    continue
                if colour[child] == grey:
                    path = [n for n, _ in stack]
                    cycle = path[path.index(child):] + [child]
                    raise NonEpisodicError(cycle)
                if colour[child] == white:
                    colour[child] = grey
                    stack.append((child, 0))

        return tuple(order)

    def is_terminal(self, state: State) -> bool:
        """Return True for the designated terminal state."""
        return state == self.terminal

    def step(self, state: State, action: int) -> tuple[State, int]:
        """
        Apply the deterministic dynamics.

        Returns:
            Tuple of (next_state, reward)

        Raises:
            UnknownStateError: If state is not a nonterminal state of this MDP
        """
        key = (state, action)
        if key not in self.next_state:
            raise UnknownStateError(f"no transition for state {state!r}, action {action}")
        return self.next_state[key], self.reward[key]

    def transitions(self) -> Iterator[Transition]:
        """Yield every (s, a, p(s, a)) triple of the MDP."""
        for s in self.states:
            for a in range(self.action_count):
                yield s, a, self.next_state[(s, a)]

    @property
    def topological_order(self) -> tuple:
        return self._order


@dataclass(frozen=True)
class QFunction:
    """
    Exact tabular action-value function.

    Two QFunctions are equal (and hash equally) exactly when they assign the
    same integers to the same states, which makes them usable as set members.
    The terminal state always has value zero for every action.
    """

    states: tuple
    action_count: int
    table: tuple[tuple[int, ...], ...]
    terminal: State = TERMINAL
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if len(self.table) != len(self.states):
            raise MDPError("Q table must have one row per state")
        for row in self.table:
            if len(row) != self.action_count:
                raise MDPError("Q table rows must have one entry per action")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})

    @classmethod
    def from_function(
        cls,
        states: Iterable[State],
        action_count: int,
        fn: Callable[[State, int], int],
        terminal: State = TERMINAL,
    ) -> "QFunction":
        """Tabulate an integer-valued function of (state, action)."""
        states = tuple(states)
        table = tuple(
            tuple(_check_integer(fn(s, a), "Q value") for a in range(action_count))
            for s in states
        )
        return cls(states, action_count, table, terminal)

    def value(self, state: State, action: int) -> int:
        """
        Look up q(state, action).

        Raises:
            UnknownStateError: If state is neither known nor terminal
        """
        if state == self.terminal:
            return 0
        try:
            row = self.table[self._index[state]]
        except KeyError:
            raise UnknownStateError(f"state {state!r} is not known to this Q-function")
        return row[action]

    def max_value(self, state: State) -> int:
        """Return max over actions of q(state, a); zero at the terminal state."""
        if state == self.terminal:
            return 0
        try:
            return max(self.table[self._index[state]])
        except KeyError:
            raise UnknownStateError(f"state {state!r} is not known to this Q-function")

    def knows(self, state: State) -> bool:
        return state == self.terminal or state in self._index

    def total(self) -> int:
        """Sum of all table entries."""
        return sum(sum(row) for row in self.table)

    def canonical_key(self) -> str:
        """Stable serialization of the exact table, used as a sort and report key."""
        return json.dumps(
            [[repr(s), list(row)] for s, row in zip(self.states, self.table)],
            separators=(",", ":"),
        )

    def to_dict(self) -> dict:
        return {repr(s): list(row) for s, row in zip(self.states, self.table)}


def solve_optimal_q(mdp: ExplicitMDP) -> QFunction:
    """
    Compute the optimal action-value function by backward induction.

    States are visited in topological order (successors first), so every
    value is final the first time it is written.

    Args:
        mdp: A validated episodic MDP

    Returns:
        QFunction with q(s, a) = r(s, a) + max_a' q(p(s, a), a')
    """
    best = {mdp.terminal: 0}
    rows = {}
    for s in mdp.topological_order:
        row = tuple(
            mdp.reward[(s, a)] + best[mdp.next_state[(s, a)]]
            for a in range(mdp.action_count)
        )
        rows[s] = row
        best[s] = max(row)
    table = tuple(rows[s] for s in mdp.states)
    return QFunction(mdp.states, mdp.action_count, table, mdp.terminal)


def _reward_lookup(reward: RewardTable, state: State, action: int) -> int:
    if callable(reward):
        return reward(state, action)
    try:
        return reward[(state, action)]
    except KeyError:
        raise UnknownStateError(f"no reward for state {state!r}, action {action}")


def bellman_consistent(q: QFunction, reward: RewardTable, transitions: Iterable[Transition]) -> bool:
    """
    Check q(s, a) = r(s, a) + max_a' q(s', a') on every listed transition.

    Args:
        q: Candidate action-value function
        reward: Reward table as a mapping or a callable (state, action) -> int
        transitions: Triples (s, a, s')

    Returns:
        True iff the equation holds exactly for all transitions

    Raises:
        UnknownStateError: If a transition references a state q does not know
    """
    transitions = list(transitions)
    for s, a, s_next in transitions:
        if not q.knows(s) or not q.knows(s_next):
            missing = s if not q.knows(s) else s_next
            raise UnknownStateError(f"transition references unknown state {missing!r}")
    for s, a, s_next in transitions:
        if q.value(s, a) != _reward_lookup(reward, s, a) + q.max_value(s_next):
            return False
    return True


def greedy_actions(q: QFunction, state: State) -> frozenset[int]:
    """
    Return the full argmax set of q at a nonterminal state.

    Ties are kept; no tie-break happens here.

    Raises:
        ValueError: If state is terminal
    """
    if state == q.terminal:
        raise ValueError("greedy actions are undefined at the terminal state")
    best = q.max_value(state)
    return frozenset(a for a in range(q.action_count) if q.value(state, a) == best)


def optimal_value(q: QFunction, state: State) -> int:
    """Value of the best action at state."""
    return q.max_value(state)


def build_horizon_mdp(
    cells: Iterable[State],
    action_count: int,
    step: Callable[[State, int], tuple[State, int, bool]],
    horizon: int,
) -> ExplicitMDP:
    """
    Turn a possibly looping deterministic task into an episodic MDP.

    States are (steps_left, cell) pairs. Each step counts down; when no steps
    are left the next transition goes to the terminal state whatever the task
    says. With a horizon longer than every shortest path, the optimal actions
    at (horizon, cell) are exactly the shortest-path actions of the task.

    Args:
        cells: Task states that can be occupied before termination
        action_count: Number of actions
        step: Function (cell, action) -> (next_cell, reward, done)
        horizon: Number of steps before forced termination

    Returns:
        ExplicitMDP over (steps_left, cell) states
    """
    cells = tuple(cells)
    states = tuple((t, c) for t in range(horizon, -1, -1) for c in cells)
    next_state = {}
    reward = {}
    for t, c in states:
        for a in range(action_count):
            nxt, r, done = step(c, a)
            reward[((t, c), a)] = r
            next_state[((t, c), a)] = TERMINAL if done or t == 0 else (t - 1, nxt)
    return ExplicitMDP(states, action_count, next_state, reward)


def parse_mdp_text(text: str) -> ExplicitMDP:
    """
    Parse the plain-text MDP format.

    Format (one item per line, `#` starts a comment)::

        terminal END
        actions 2
        s0 0 s1 0
        s0 1 END 1
        s1 0 END 0
        s1 1 END 2

    The `actions` line is optional; without it the count is inferred from the
    largest action index.

    Raises:
        MDPFormatError: For malformed lines or a missing terminal declaration
        NonEpisodicError: If the described MDP is not episodic
    """
    terminal: Optional[str] = None
    action_count: Optional[int] = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "terminal":
            if len(parts) != 2:
                raise MDPFormatError(f"line {lineno}: expected 'terminal <state>'")
            terminal = parts[1]
            continue
        if parts[0] == "actions":
            if len(parts) != 2 or not parts[1].isdigit():
                raise MDPFormatError(f"line {lineno}: expected 'actions <count>'")
            action_count = int(parts[1])
            continue
        if len(parts) != 4:
            raise MDPFormatError(
                f"line {lineno}: expected 'state action next_state reward', got {raw!r}"
            )
        try:
            action = int(parts[1])
            value = int(parts[3])
        except ValueError:
            raise MDPFormatError(f"line {lineno}: action and reward must be integers")
        rows.append((parts[0], action, parts[2], value))

    if terminal is None:
        raise MDPFormatError("missing 'terminal <state>' declaration")
    if not rows:
        raise MDPFormatError("no transitions listed")
    if action_count is None:
        action_count = max(a for _, a, _, _ in rows) + 1

    states = []
    next_state = {}
    reward = {}
    for s, a, s_next, value in rows:
        if s == terminal:
            raise MDPFormatError(f"transition listed from terminal state {terminal!r}")
        if s not in states:
            states.append(s)
        if (s, a) in next_state:
            raise MDPFormatError(f"duplicate transition for ({s}, {a})")
        next_state[(s, a)] = s_next
        reward[(s, a)] = value
    return ExplicitMDP(tuple(states), action_count, next_state, reward, terminal)


def load_mdp_file(path: Union[str, Path]) -> ExplicitMDP:
    """Read and parse an MDP description file."""
    text = Path(path).read_text()
    mdp = parse_mdp_text(text)
    logger.info("Loaded MDP from %s: %d states, %d actions", path, len(mdp.states), mdp.action_count)
    return mdp
