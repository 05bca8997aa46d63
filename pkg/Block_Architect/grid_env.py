"""
Deterministic block-construction environment.

Blocks fall Tetris-style: a vertical block lands on top of its column, a
horizontal block rests on the taller of its two columns. The builder executes
every message perfectly; abstractions are expanded depth-first and consume a
single time step.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import FrozenSet, Sequence, Tuple

import numpy as np

from Block_Architect.data_model import BlockAction, Grid, InactiveMessage, Lexicon, empty_grid
from Block_Architect.utility import (
    COMPLETION_BONUS, GRID_SIZE, MAX_MESSAGES_PER_EPISODE,
    PARTIAL_MATCH_WEIGHT, TIME_DISCOUNT, Orientation
)

Cell = Tuple[int, int]


class ConstructionError(Exception):
    """Base class for environment-related exceptions."""
    pass


class InvalidPlacement(ConstructionError):
    """Raised when a block would overflow the grid or has no anchor column pair."""
    pass


class InvalidMessage(ConstructionError):
    """Raised when a message cannot be executed from the given state."""
    pass


@dataclass(frozen=True, eq=False)
class PlacementOutcome:
    new_grid: Grid
    covered_cells: FrozenSet[Cell]


@dataclass(frozen=True, eq=False)
class StepResult:
    next_state: Grid
    reward: float
    terminal: bool
    cells_matched: int
    success: bool


def column_heights(grid: Grid) -> Tuple[int, ...]:
    """Height of each column: one above its topmost occupied cell, 0 when empty."""
    occupied = grid.any(axis=0)
    top = GRID_SIZE - np.argmax(grid[::-1], axis=0)
    return tuple(int(h) for h in np.where(occupied, top, 0))


def _landing_row(heights: Sequence[int], action: BlockAction) -> int:
    column = action.position - 1
    if action.orientation == Orientation.VERTICAL:
        row = heights[column]
        if row + 2 > GRID_SIZE:
            raise InvalidPlacement(f"{action.label} overflows column {action.position}")
        return row
    if action.position >= GRID_SIZE:
        raise InvalidPlacement(f"{action.label} has no right-hand column")
    row = max(heights[column], heights[column + 1])
    if row + 1 > GRID_SIZE:
        raise InvalidPlacement(f"{action.label} overflows columns {action.position}-{action.position + 1}")
    return row


def _footprint(row: int, action: BlockAction) -> FrozenSet[Cell]:
    if action.orientation == Orientation.VERTICAL:
        return frozenset({(row, action.position), (row + 1, action.position)})
    return frozenset({(row, action.position), (row, action.position + 1)})


def place_block(grid: Grid, action: BlockAction) -> PlacementOutcome:
    """
    Drop a block onto the grid.

    Args:
        grid (Grid): Current occupancy, left untouched
        action (BlockAction): The block to place

    Returns:
        PlacementOutcome: The new grid and the two newly covered (row, column) cells

    Raises:
        InvalidPlacement: If the block would overflow the top or is Horizontal@6
    """
    row = _landing_row(column_heights(grid), action)
    covered = _footprint(row, action)
    new_grid = grid.copy()
    for r, c in covered:
        new_grid[r, c - 1] = True
    return PlacementOutcome(new_grid, covered)


def partial_match(pre_grid: Grid, covered_cells: FrozenSet[Cell], goal: Grid) -> int:
    """Number of newly covered cells that belong to the goal. `covered_cells` must be empty in `pre_grid`."""
    return sum(1 for r, c in covered_cells if goal[r, c - 1])


def reward(state_after: Grid, goal: Grid, matched: int, t: int) -> float:
    """(0.1 * matched + 1 * [state == goal]) * 0.9 ** t."""
    complete = COMPLETION_BONUS if np.array_equal(state_after, goal) else 0.0
    return (PARTIAL_MATCH_WEIGHT * matched + complete) * TIME_DISCOUNT ** t


def unreachable(state: Grid, goal: Grid) -> bool:
    """Blocks are never removed, so any occupied non-goal cell dooms the episode."""
    return bool(np.any(state & ~goal))


@lru_cache(maxsize=1 << 16)
def expansion_fits(heights: Tuple[int, ...], actions: Tuple[BlockAction, ...]) -> bool:
    """Whether the whole action sequence executes from a state with these column heights."""
    heights = list(heights)
    for action in actions:
        try:
            row = _landing_row(heights, action)
        except InvalidPlacement:
            return False
        column = action.position - 1
        if action.orientation == Orientation.VERTICAL:
            heights[column] = row + 2
        else:
            heights[column] = heights[column + 1] = row + 1
    return True


def legal_messages(state: Grid, goal: Grid, lexicon: Lexicon) -> np.ndarray:
    """
    Mask of length M_max: active messages whose full expansion executes from `state`.
    The goal does not affect legality.
    """
    heights = column_heights(state)
    mask = np.zeros(lexicon.capacity, dtype=bool)
    for message in lexicon:
        mask[message.id] = expansion_fits(heights, lexicon.expand(message.id))
    return mask


def step(
        state: Grid,
        goal: Grid,
        message: int,
        lexicon: Lexicon,
        t: int,
        max_messages: int = MAX_MESSAGES_PER_EPISODE
    ) -> StepResult:
    """
    Execute one message: expand it, place every block, score with a single time index.

    Args:
        state (Grid): State before the message
        goal (Grid): The goal shape
        message (int): Message id
        lexicon (Lexicon): The current lexicon
        t (int): 0-based message index within the episode
        max_messages (int): Episode budget; the message at t = max_messages - 1 is terminal

    Returns:
        StepResult: Next state, reward, terminal flag and matched cell count

    Raises:
        InvalidMessage: If the message is inactive or its expansion hits an invalid placement
    """
    try:
        actions = lexicon.expand(message)
    except InactiveMessage as e:
        raise InvalidMessage(str(e)) from e
    grid = state
    matched = 0
    for action in actions:
        try:
            outcome = place_block(grid, action)
        except InvalidPlacement as e:
            raise InvalidMessage(f"{lexicon.describe(message)} fails at {action.label}: {e}") from e
        matched += partial_match(grid, outcome.covered_cells, goal)
        grid = outcome.new_grid
    success = bool(np.array_equal(grid, goal))
    terminal = success or unreachable(grid, goal) or t + 1 >= max_messages
    return StepResult(
        next_state=grid,
        reward=reward(grid, goal, matched, t),
        terminal=terminal,
        cells_matched=matched,
        success=success
    )


def encode_observation(goal: Grid, state: Grid) -> np.ndarray:
    """The 72-vector network input: goal cells then state cells, row-major, bottom row first."""
    return np.concatenate((goal.reshape(-1), state.reshape(-1))).astype(np.float64)


class ConstructionEnv:
    """Binds the episode budget to the pure environment functions."""

    def __init__(self, max_messages: int = MAX_MESSAGES_PER_EPISODE) -> None:
        if max_messages < 1:
            raise ValueError("The episode budget must allow at least one message")
        self.max_messages = max_messages

    def reset(self) -> Grid:
        return empty_grid()

    def step(self, state: Grid, goal: Grid, message: int, lexicon: Lexicon, t: int) -> StepResult:
        return step(state, goal, message, lexicon, t, self.max_messages)

    def legal_messages(self, state: Grid, goal: Grid, lexicon: Lexicon) -> np.ndarray:
        return legal_messages(state, goal, lexicon)
