"""Environment suite.

Four environments that expose flat binary observations:

- ProcMaze: episodic maze regenerated by randomized depth-first search
  every episode, with rare teleports to the goal.
- ButtonGrid: continuing 5x5 grid of buttons toggled by stepping on them.
- PanFlute: continuing set of pipes whose activations travel upward.
- OpenGrid: episodic open grid with a one-hot agent position.

Each environment separates its dynamics (`transition`, a function of a state,
an action and a generator) from its own mutable episode state, so the same
dynamics can step decoded states for perfect-model rollouts.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, NamedTuple, Optional

import numpy as np

# up, down, left, right, noop
ACTION_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
ACTION_NAMES = ("up", "down", "left", "right", "noop")

BUTTON_GRID_SIZE = 5


class EnvError(Exception):
    """Base exception for environment errors."""
    pass


class LayoutError(EnvError, ValueError):
    """Raised when a wall layout violates the environment's requirements."""
    pass


class ObservationDecodeError(EnvError, ValueError):
    """Raised when an observation does not encode any valid state."""
    pass


class Outcome(NamedTuple):
    """Result of applying the dynamics to a state."""

    state: Any
    reward: float
    terminal: bool
    spontaneous: bool


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    reward: float
    terminal: bool
    spontaneous: bool = False


def one_hot(index: int, size: int) -> np.ndarray:
    bits = np.zeros(size, dtype=np.uint8)
    bits[index] = 1
    return bits


def cell_mask(cells, size: int) -> np.ndarray:
    """Flat N*N indicator of a set of (row, col) cells."""
    bits = np.zeros(size * size, dtype=np.uint8)
    for r, c in cells:
        bits[r * size + c] = 1
    return bits


def decode_one_hot(bits: np.ndarray, what: str) -> int:
    hot = np.flatnonzero(bits)
    if len(hot) != 1:
        raise ObservationDecodeError(f"{what} block has {len(hot)} active bits, expected 1")
    return int(hot[0])


def _check_binary(obs: np.ndarray, size: int) -> np.ndarray:
    obs = np.asarray(obs)
    if obs.shape != (size,):
        raise ObservationDecodeError(f"expected {size} bits, got shape {obs.shape}")
    if np.any((obs != 0) & (obs != 1)):
        raise ObservationDecodeError("observation contains values other than 0 and 1")
    return obs.astype(np.uint8)


def grid_move(cell: tuple[int, int], action: int, size: int, walls=frozenset()) -> tuple[int, int]:
    """Move one cell; a move into the edge or a wall leaves the cell unchanged."""
    dr, dc = ACTION_DELTAS[action]
    r, c = cell[0] + dr, cell[1] + dc
    if not (0 <= r < size and 0 <= c < size) or (r, c) in walls:
        return cell
    return (r, c)


def grid_neighbours(cell: tuple[int, int], size: int) -> list[tuple[int, int]]:
    r, c = cell
    candidates = ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))
    return [(i, j) for i, j in candidates if 0 <= i < size and 0 <= j < size]


class Environment(ABC):
    """
    Base class holding the episode state and the generator of one instance.

    Draw order per step: dynamics draws (none for the built-in environments),
    then one uniform draw for the spontaneous event when it is enabled.
    """

    name = ""
    episodic = False

    def __init__(self, rng: np.random.Generator, disable_spontaneous: bool = False):
        self.rng = rng
        self.disable_spontaneous = disable_spontaneous
        self.state = None

    @property
    @abstractmethod
    def action_count(self) -> int:
        ...

    @property
    @abstractmethod
    def observation_size(self) -> int:
        ...

    @property
    @abstractmethod
    def nominal_spontaneous_probability(self) -> float:
        ...

    @property
    def spontaneous_probability(self) -> float:
        return 0.0 if self.disable_spontaneous else self.nominal_spontaneous_probability

    @property
    def episode_cap(self) -> Optional[int]:
        """Step cap for greedy evaluation episodes; None for continuing environments."""
        return None

    @abstractmethod
    def sample_initial_state(self, rng: np.random.Generator):
        ...

    @abstractmethod
    def transition(self, state, action: int, rng: np.random.Generator) -> Outcome:
        ...

    @abstractmethod
    def encode(self, state) -> np.ndarray:
        ...

    @abstractmethod
    def state_from_observation(self, obs: np.ndarray):
        ...

    def _spontaneous(self, rng: np.random.Generator) -> bool:
        p = self.spontaneous_probability
        return p > 0 and rng.random() < p

    def reset(self) -> np.ndarray:
        self.state = self.sample_initial_state(self.rng)
        return self.encode(self.state)

    def step(self, action: int) -> StepResult:
        """
        Advance the instance by one step.

        Raises:
            EnvError: If reset() has not been called
            ValueError: If the action is out of range
        """
        if self.state is None:
            raise EnvError(f"{self.name}: step() called before reset()")
        if not 0 <= action < self.action_count:
            raise ValueError(f"{self.name}: action {action} outside [0, {self.action_count})")
        outcome = self.transition(self.state, int(action), self.rng)
        self.state = outcome.state
        return StepResult(self.encode(outcome.state), outcome.reward, outcome.terminal, outcome.spontaneous)


def generate_maze(size: int, rng: np.random.Generator) -> frozenset:
    """
    Carve a maze by randomized depth-first search and return its wall cells.

    A wall cell is carved only when the current cell is its single free
    neighbour, so the free cells form a tree and every free cell reaches
    every other.
    """
    if size < 2:
        raise LayoutError(f"maze size must be at least 2, got {size}")
    free = np.zeros((size, size), dtype=bool)
    start = (int(rng.integers(size)), int(rng.integers(size)))
    free[start] = True
    stack = [start]
    while stack:
        cell = stack[-1]
        candidates = [
            n for n in grid_neighbours(cell, size)
            if not free[n] and sum(free[m] for m in grid_neighbours(n, size)) == 1
        ]
        if not candidates:
            stack.pop()
            continue
        nxt = candidates[int(rng.integers(len(candidates)))]
        free[nxt] = True
        stack.append(nxt)
    return frozenset((r, c) for r in range(size) for c in range(size) if not free[r, c])


@dataclass(frozen=True)
class MazeState:
    agent: tuple[int, int]
    goal: tuple[int, int]
    walls: frozenset


class ProcMaze(Environment):
    """
    Procedurally generated maze; reward -1 per step until the goal.

    The teleport probability is 0.1 / T with T = N*N unless
    `teleport_horizon` overrides it.
    """

    name = "procmaze"
    episodic = True

    def __init__(self, size: int, rng: np.random.Generator, disable_spontaneous: bool = False,
                 teleport_horizon: Optional[int] = None):
        if size < 2:
            raise ValueError(f"ProcMaze size must be at least 2, got {size}")
        super().__init__(rng, disable_spontaneous)
        self.size = size
        self.teleport_horizon = teleport_horizon or size * size

    @property
    def action_count(self) -> int:
        return len(ACTION_DELTAS)

    @property
    def observation_size(self) -> int:
        return 4 * self.size * self.size

    @property
    def nominal_spontaneous_probability(self) -> float:
        return 0.1 / self.teleport_horizon

    @property
    def episode_cap(self) -> int:
        return 4 * self.size * self.size

    def sample_initial_state(self, rng: np.random.Generator) -> MazeState:
        walls = generate_maze(self.size, rng)
        free = [(r, c) for r in range(self.size) for c in range(self.size) if (r, c) not in walls]
        goal_index, agent_index = rng.choice(len(free), size=2, replace=False)
        return MazeState(free[int(agent_index)], free[int(goal_index)], walls)

    def transition(self, state: MazeState, action: int, rng: np.random.Generator) -> Outcome:
        agent = grid_move(state.agent, action, self.size, state.walls)
        spontaneous = self._spontaneous(rng)
        if spontaneous:
            agent = state.goal
        return Outcome(MazeState(agent, state.goal, state.walls), -1.0, agent == state.goal, spontaneous)

    def encode(self, state: MazeState) -> np.ndarray:
        n = self.size
        walls = cell_mask(state.walls, n)
        return np.concatenate([
            one_hot(state.goal[0] * n + state.goal[1], n * n),
            one_hot(state.agent[0] * n + state.agent[1], n * n),
            walls,
            1 - walls,
        ])

    def state_from_observation(self, obs: np.ndarray) -> MazeState:
        n2 = self.size * self.size
        obs = _check_binary(obs, self.observation_size)
        goal_bits, agent_bits, wall_bits, open_bits = (obs[i * n2:(i + 1) * n2] for i in range(4))
        if np.any(wall_bits == open_bits):
            raise ObservationDecodeError("wall and no-wall blocks are not complementary")
        goal = divmod(decode_one_hot(goal_bits, "goal"), self.size)
        agent = divmod(decode_one_hot(agent_bits, "agent"), self.size)
        walls = frozenset(divmod(int(i), self.size) for i in np.flatnonzero(wall_bits))
        if agent in walls or goal in walls:
            raise ObservationDecodeError("agent or goal inside a wall")
        return MazeState(agent, goal, walls)


@dataclass(frozen=True)
class ButtonState:
    agent: tuple[int, int]
    buttons: frozenset
    on: frozenset


class ButtonGrid(Environment):
    """
    Buttons on a 5x5 grid, toggled when the agent moves onto them.

    When every button is on, or the spontaneous all-on event fires, the
    transition pays reward 1 and the successor has new button positions,
    all off.
    """

    name = "buttongrid"

    def __init__(self, button_count: int, rng: np.random.Generator, disable_spontaneous: bool = False):
        cells = BUTTON_GRID_SIZE * BUTTON_GRID_SIZE
        if not 1 <= button_count <= cells:
            raise ValueError(f"button_count must be in [1, {cells}], got {button_count}")
        super().__init__(rng, disable_spontaneous)
        self.button_count = button_count

    @property
    def action_count(self) -> int:
        return len(ACTION_DELTAS)

    @property
    def observation_size(self) -> int:
        return 3 * BUTTON_GRID_SIZE * BUTTON_GRID_SIZE

    @property
    def nominal_spontaneous_probability(self) -> float:
        return 0.1 / (BUTTON_GRID_SIZE * BUTTON_GRID_SIZE)

    def _place_buttons(self, rng: np.random.Generator) -> frozenset:
        picks = rng.choice(BUTTON_GRID_SIZE * BUTTON_GRID_SIZE, size=self.button_count, replace=False)
        return frozenset(divmod(int(i), BUTTON_GRID_SIZE) for i in picks)

    def sample_initial_state(self, rng: np.random.Generator) -> ButtonState:
        agent = divmod(int(rng.integers(BUTTON_GRID_SIZE * BUTTON_GRID_SIZE)), BUTTON_GRID_SIZE)
        return ButtonState(agent, self._place_buttons(rng), frozenset())

    def transition(self, state: ButtonState, action: int, rng: np.random.Generator) -> Outcome:
        agent = grid_move(state.agent, action, BUTTON_GRID_SIZE)
        on = state.on
        if agent != state.agent and agent in state.buttons:
            on = on ^ {agent}
        spontaneous = self._spontaneous(rng)
        if on == state.buttons or spontaneous:
            return Outcome(ButtonState(agent, self._place_buttons(rng), frozenset()), 1.0, False, spontaneous)
        return Outcome(ButtonState(agent, state.buttons, on), 0.0, False, False)

    def encode(self, state: ButtonState) -> np.ndarray:
        n = BUTTON_GRID_SIZE
        return np.concatenate([
            one_hot(state.agent[0] * n + state.agent[1], n * n),
            cell_mask(state.on, n),
            cell_mask(state.buttons - state.on, n),
        ])

    def state_from_observation(self, obs: np.ndarray) -> ButtonState:
        n2 = BUTTON_GRID_SIZE * BUTTON_GRID_SIZE
        obs = _check_binary(obs, self.observation_size)
        agent_bits, on_bits, off_bits = obs[:n2], obs[n2:2 * n2], obs[2 * n2:]
        if np.any(on_bits & off_bits):
            raise ObservationDecodeError("a cell is marked both on and off")
        agent = divmod(decode_one_hot(agent_bits, "agent"), BUTTON_GRID_SIZE)
        on = frozenset(divmod(int(i), BUTTON_GRID_SIZE) for i in np.flatnonzero(on_bits))
        off = frozenset(divmod(int(i), BUTTON_GRID_SIZE) for i in np.flatnonzero(off_bits))
        return ButtonState(agent, on | off, on)


@dataclass(frozen=True)
class FluteState:
    """Per-pipe activations, bottom cell first, end cell last."""

    pipes: tuple[tuple[bool, ...], ...]

    @property
    def active_ends(self) -> int:
        return sum(pipe[-1] for pipe in self.pipes)


class PanFlute(Environment):
    """
    n pipes; pipe k has n - k cells and action k activates its bottom cell.

    Reward 1 is paid when every pipe end is active in the current state.
    Activations then move up one cell (ends switch off), the pressed pipe's
    bottom cell switches on, and with probability 1/n^2 all ends switch on.
    """

    name = "panflute"

    def __init__(self, pipes: int, rng: np.random.Generator, disable_spontaneous: bool = False):
        if pipes < 1:
            raise ValueError(f"PanFlute needs at least one pipe, got {pipes}")
        super().__init__(rng, disable_spontaneous)
        self.pipes = pipes

    @property
    def action_count(self) -> int:
        return self.pipes

    @property
    def observation_size(self) -> int:
        return self.pipes * (self.pipes + 1) // 2

    @property
    def nominal_spontaneous_probability(self) -> float:
        return 1.0 / (self.pipes * self.pipes)

    @property
    def max_reward_rate(self) -> float:
        return 1.0 / self.pipes

    def pipe_lengths(self) -> list[int]:
        return [self.pipes - k for k in range(self.pipes)]

    def end_indices(self) -> np.ndarray:
        """Observation indices of the pipe-end cells."""
        return np.cumsum(self.pipe_lengths()) - 1

    def sample_initial_state(self, rng: np.random.Generator) -> FluteState:
        return FluteState(tuple((False,) * length for length in self.pipe_lengths()))

    def transition(self, state: FluteState, action: int, rng: np.random.Generator) -> Outcome:
        reward = 1.0 if state.active_ends == self.pipes else 0.0
        pipes = [[False] + list(pipe[:-1]) for pipe in state.pipes]
        pipes[action][0] = True
        spontaneous = self._spontaneous(rng)
        if spontaneous:
            for pipe in pipes:
                pipe[-1] = True
        return Outcome(FluteState(tuple(tuple(p) for p in pipes)), reward, False, spontaneous)

    def encode(self, state: FluteState) -> np.ndarray:
        return np.fromiter((cell for pipe in state.pipes for cell in pipe), dtype=np.uint8,
                           count=self.observation_size)

    def state_from_observation(self, obs: np.ndarray) -> FluteState:
        obs = _check_binary(obs, self.observation_size)
        pipes, start = [], 0
        for length in self.pipe_lengths():
            pipes.append(tuple(bool(b) for b in obs[start:start + length]))
            start += length
        return FluteState(tuple(pipes))


@dataclass(frozen=True)
class GridState:
    agent: tuple[int, int]


class OpenGrid(Environment):
    """Open N x N grid, goal in the bottom-right corner, four moves."""

    name = "opengrid"
    episodic = True

    def __init__(self, size: int, rng: np.random.Generator, disable_spontaneous: bool = False):
        if size < 2:
            raise ValueError(f"OpenGrid size must be at least 2, got {size}")
        super().__init__(rng, disable_spontaneous)
        self.size = size
        self.goal = (size - 1, size - 1)

    @property
    def action_count(self) -> int:
        return 4

    @property
    def observation_size(self) -> int:
        return self.size * self.size

    @property
    def nominal_spontaneous_probability(self) -> float:
        return 0.1 / self.size

    @property
    def episode_cap(self) -> int:
        return 4 * self.size * self.size

    def sample_initial_state(self, rng: np.random.Generator) -> GridState:
        # every cell except the goal, which is the last index
        return GridState(divmod(int(rng.integers(self.size * self.size - 1)), self.size))

    def transition(self, state: GridState, action: int, rng: np.random.Generator) -> Outcome:
        agent = grid_move(state.agent, action, self.size)
        spontaneous = self._spontaneous(rng)
        if spontaneous:
            agent = self.goal
        return Outcome(GridState(agent), -1.0, agent == self.goal, spontaneous)

    def encode(self, state: GridState) -> np.ndarray:
        return one_hot(state.agent[0] * self.size + state.agent[1], self.size * self.size)

    def state_from_observation(self, obs: np.ndarray) -> GridState:
        obs = _check_binary(obs, self.observation_size)
        return GridState(divmod(decode_one_hot(obs, "agent"), self.size))


ENVIRONMENTS = {
    "procmaze": ProcMaze,
    "buttongrid": ButtonGrid,
    "panflute": PanFlute,
    "opengrid": OpenGrid,
}


def make_env(name: str, size: int, rng: np.random.Generator, disable_spontaneous: bool = False) -> Environment:
    """
    Build an environment instance by name.

    Args:
        name: One of ENVIRONMENTS
        size: Grid size (procmaze, opengrid), button count (buttongrid) or pipe count (panflute)
        rng: Generator owned by the instance
        disable_spontaneous: Turn off teleports and spontaneous rewards

    Raises:
        ValueError: If the name is unknown
    """
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"Unknown environment: {name}. Must be one of: {', '.join(ENVIRONMENTS)}")
    return cls(size, rng, disable_spontaneous=disable_spontaneous)
