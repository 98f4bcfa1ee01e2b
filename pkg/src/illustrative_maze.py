"""Offline 3x3 maze datasets.

The goal sits in the top-left cell. A basic set of transitions covers eight
layouts with one wall each; evaluation layouts have two walls leaving a
single open path to the goal, and CoverageLevel decides how much of them the
dataset includes.
"""

import logging
from collections import deque
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from src.environments import ACTION_DELTAS, LayoutError, cell_mask, grid_move, grid_neighbours, one_hot
from src.exact_mdp import build_horizon_mdp, greedy_actions, solve_optimal_q
from src.transitions import Transition

logger = logging.getLogger(__name__)

SIZE = 3
GOAL = (0, 0)
ACTION_COUNT = len(ACTION_DELTAS)
OBSERVATION_SIZE = 4 * SIZE * SIZE
CELLS = tuple((r, c) for r in range(SIZE) for c in range(SIZE))

EVALUATION_LAYOUTS = {
    "lower": frozenset({(1, 0), (1, 1)}),
    "upper": frozenset({(0, 1), (1, 1)}),
}


class CoverageLevel(Enum):
    """How much of the evaluation layouts the offline dataset covers."""

    ALL_EVALUATION = "all-evaluation"
    PATH_TO_GOAL = "path-to-goal"
    SINGLE_CELL = "single-cell"
    NO_EVALUATION = "no-evaluation"


def encode(agent: tuple[int, int], walls: frozenset) -> np.ndarray:
    """Agent one-hot, goal one-hot, wall mask, no-wall mask (36 bits)."""
    wall_bits = cell_mask(walls, SIZE)
    return np.concatenate([
        one_hot(agent[0] * SIZE + agent[1], SIZE * SIZE),
        one_hot(GOAL[0] * SIZE + GOAL[1], SIZE * SIZE),
        wall_bits,
        1 - wall_bits,
    ])


def free_cells(walls: frozenset) -> list[tuple[int, int]]:
    return [cell for cell in CELLS if cell not in walls]


def step(agent: tuple[int, int], walls: frozenset, action: int) -> tuple[tuple[int, int], int, bool]:
    nxt = grid_move(agent, action, SIZE, walls)
    return nxt, -1, nxt == GOAL


def distances_to_goal(walls: frozenset) -> dict:
    """Shortest-path distance from each free cell that can reach the goal."""
    dist = {GOAL: 0}
    queue = deque([GOAL])
    while queue:
        cell = queue.popleft()
        for n in grid_neighbours(cell, SIZE):
            if n not in walls and n not in dist:
                dist[n] = dist[cell] + 1
                queue.append(n)
    return dist


def check_layout(walls: Iterable) -> frozenset:
    """
    Validate a wall layout.

    Raises:
        LayoutError: If a wall is off the grid or on the goal, or some free
            cell cannot reach the goal
    """
    walls = frozenset(tuple(w) for w in walls)
    for cell in walls:
        if cell not in CELLS:
            raise LayoutError(f"wall {cell} is outside the 3x3 grid")
    if GOAL in walls:
        raise LayoutError("the goal cell cannot be a wall")
    dist = distances_to_goal(walls)
    cut_off = [cell for cell in free_cells(walls) if cell not in dist]
    if cut_off:
        raise LayoutError(f"cells {cut_off} cannot reach the goal with walls {sorted(walls)}")
    return walls


def open_path(walls: Iterable) -> list[tuple[int, int]]:
    """
    The single open path of an evaluation layout, from the far cell to the goal.

    Raises:
        LayoutError: Unless the layout has exactly two walls and its free
            cells form one simple path ending at the goal
    """
    walls = check_layout(walls)
    if len(walls) != 2:
        raise LayoutError(f"evaluation layouts have exactly 2 walls, got {len(walls)}")
    free = set(free_cells(walls))
    degree = {cell: sum(n in free for n in grid_neighbours(cell, SIZE)) for cell in free}
    ends = [cell for cell, d in degree.items() if d == 1]
    if any(d > 2 for d in degree.values()) or len(ends) != 2 or GOAL not in ends:
        raise LayoutError(f"walls {sorted(walls)} do not leave a unique open path to the goal")
    dist = distances_to_goal(walls)
    far = max(free, key=lambda cell: dist[cell])
    path = [far]
    while path[-1] != GOAL:
        cell = path[-1]
        path.append(next(n for n in grid_neighbours(cell, SIZE) if dist.get(n) == dist[cell] - 1))
    return path


def path_action(cell: tuple[int, int], nxt: tuple[int, int]) -> int:
    delta = (nxt[0] - cell[0], nxt[1] - cell[1])
    return ACTION_DELTAS.index(delta)


def illustrative_maze_enumerate(layouts: Iterable[Iterable]) -> list[Transition]:
    """
    Every (free non-goal cell, action) transition of each layout.

    Raises:
        LayoutError: If a layout blocks some cell from the goal
    """
    transitions = []
    for layout in layouts:
        walls = check_layout(layout)
        for agent in free_cells(walls):
            if agent == GOAL:
                continue
            obs = encode(agent, walls)
            for action in range(ACTION_COUNT):
                nxt, reward, done = step(agent, walls, action)
                transitions.append(Transition(obs, action, float(reward), encode(nxt, walls), done))
    return transitions


def basic_layouts() -> list[frozenset]:
    """One wall in each of the eight non-goal cells."""
    return [frozenset({cell}) for cell in CELLS if cell != GOAL]


def basic_set() -> list[Transition]:
    return illustrative_maze_enumerate(basic_layouts())


def build_coverage_dataset(level: CoverageLevel, eval_layouts: Optional[Iterable[Iterable]] = None) -> list[Transition]:
    """
    Basic set plus the evaluation transitions selected by `level`.

    Args:
        level: Coverage of the evaluation layouts
        eval_layouts: Two-wall layouts with a unique open path (default: lower and upper)

    Returns:
        List of transitions, basic set first

    Raises:
        LayoutError: If an evaluation layout has no unique open path
    """
    level = CoverageLevel(level)
    if eval_layouts is None:
        eval_layouts = EVALUATION_LAYOUTS.values()
    layouts = [frozenset(tuple(w) for w in layout) for layout in eval_layouts]
    paths = [open_path(walls) for walls in layouts]
    dataset = basic_set()
    for walls, path in zip(layouts, paths):
        if level is CoverageLevel.ALL_EVALUATION:
            dataset.extend(illustrative_maze_enumerate([walls]))
        elif level is CoverageLevel.PATH_TO_GOAL:
            for cell, nxt in zip(path, path[1:]):
                action = path_action(cell, nxt)
                _, reward, done = step(cell, walls, action)
                dataset.append(Transition(encode(cell, walls), action, float(reward), encode(nxt, walls), done))
        elif level is CoverageLevel.SINGLE_CELL:
            far = path[0]
            obs = encode(far, walls)
            for action in range(ACTION_COUNT):
                nxt, reward, done = step(far, walls, action)
                dataset.append(Transition(obs, action, float(reward), encode(nxt, walls), done))
    logger.info(f"Coverage {level.value}: {len(dataset)} transitions over {len(layouts)} evaluation layouts")
    return dataset


def optimal_actions(walls: Iterable) -> dict:
    """
    Optimal action set of every free non-goal cell that reaches the goal.

    Computed by solving the layout as an explicit MDP with a step horizon
    longer than any path in the grid.
    """
    walls = frozenset(tuple(w) for w in walls)
    reachable = distances_to_goal(walls)
    cells = [cell for cell in free_cells(walls) if cell in reachable]
    horizon = len(CELLS)
    mdp = build_horizon_mdp(cells, ACTION_COUNT, lambda cell, a: step(cell, walls, a), horizon)
    q = solve_optimal_q(mdp)
    return {cell: greedy_actions(q, (horizon, cell)) for cell in cells if cell != GOAL}
