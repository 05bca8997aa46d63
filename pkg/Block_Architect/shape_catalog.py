import os
import logging
from collections import deque
from collections.abc import Sequence as SequenceABC
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from Block_Architect.data_model import (
    Grid, empty_grid, primitive_action, render_grid
)
from Block_Architect.grid_env import InvalidPlacement, place_block, unreachable
from Block_Architect.utility import GRID_SIZE, NUM_PRIMITIVES

logger = logging.getLogger(__name__)

BUILTIN_CATALOG = os.path.join(os.path.dirname(__file__), "shapes.txt")
BUILTIN_DESK_CATALOG = os.path.join(os.path.dirname(__file__), "shapes_desk.txt")
FAMILIES = ("upside_down_u", "c_shape", "l_shape")


class CatalogError(Exception):
    """Base class for shape catalog exceptions."""
    pass


class ParseError(CatalogError):
    """Raised when a shape file is malformed."""
    pass


class UnbuildableShape(CatalogError):
    """Raised when a goal cannot be produced by any sequence of primitive placements."""
    pass


@dataclass(frozen=True)
class BuildCheck:
    buildable: bool
    witness: Tuple[int, ...] = ()


@dataclass(frozen=True, eq=False)
class Shape:
    """A named goal, together with its shortest primitive build."""
    name: str
    goal: Grid
    witness: Tuple[int, ...]

    @property
    def min_primitives(self) -> int:
        return len(self.witness)

    @property
    def family(self) -> str:
        return self.name.rsplit("_", 1)[0] if "_" in self.name else self.name

    def __eq__(self, other) -> bool:
        if not isinstance(other, Shape):
            return NotImplemented
        return (self.name == other.name and self.witness == other.witness
                and np.array_equal(self.goal, other.goal))


class ShapeCatalog(SequenceABC):
    """An ordered, immutable collection of goal shapes with unique names."""

    def __init__(self, shapes: Sequence[Shape], source: str = "builtin") -> None:
        """
        Args:
            shapes (Sequence[Shape]): The shapes, in catalog order
            source (str): 'builtin' or the path the catalog was read from

        Raises:
            CatalogError: If the catalog is empty or names repeat
        """
        if not shapes:
            raise CatalogError("A catalog needs at least one shape")
        names = [shape.name for shape in shapes]
        if len(set(names)) != len(names):
            raise CatalogError("Shape names must be unique")
        self._shapes: Tuple[Shape, ...] = tuple(shapes)
        self.source = source

    def __getitem__(self, index):
        return self._shapes[index]

    def __len__(self) -> int:
        return len(self._shapes)

    def __iter__(self) -> Iterator[Shape]:
        return iter(self._shapes)

    def get(self, name: str) -> Optional[Shape]:
        for shape in self._shapes:
            if shape.name == name:
                return shape
        return None

    def families(self) -> Dict[str, List[Shape]]:
        grouped: Dict[str, List[Shape]] = {}
        for shape in self._shapes:
            grouped.setdefault(shape.family, []).append(shape)
        return grouped

    def one_per_family(self) -> 'ShapeCatalog':
        """The first shape of every family, in catalog order."""
        return ShapeCatalog([group[0] for group in self.families().values()], self.source)


def validate_buildable(goal: Grid) -> BuildCheck:
    """
    Breadth-first search over primitive placements restricted to subsets of the goal.

    Args:
        goal (Grid): The target occupancy

    Returns:
        BuildCheck: buildable flag and a shortest witness of primitive message ids
    """
    start = empty_grid()
    if np.array_equal(start, goal):
        return BuildCheck(True, ())
    parents: Dict[bytes, Tuple[Optional[bytes], int]] = {start.tobytes(): (None, -1)}
    frontier = deque([start])
    while frontier:
        grid = frontier.popleft()
        key = grid.tobytes()
        for message_id in range(NUM_PRIMITIVES):
            try:
                outcome = place_block(grid, primitive_action(message_id))
            except InvalidPlacement:
                continue
            new_grid = outcome.new_grid
            if unreachable(new_grid, goal):
                continue
            new_key = new_grid.tobytes()
            if new_key in parents:
                continue
            parents[new_key] = (key, message_id)
            if np.array_equal(new_grid, goal):
                return BuildCheck(True, _trace(parents, new_key))
            frontier.append(new_grid)
    return BuildCheck(False, ())


def _trace(parents: Dict[bytes, Tuple[Optional[bytes], int]], key: bytes) -> Tuple[int, ...]:
    witness = []
    parent, message_id = parents[key]
    while parent is not None:
        witness.append(message_id)
        parent, message_id = parents[parent]
    return tuple(reversed(witness))


def parse_catalog(text: str, source: str = "<string>") -> List[Tuple[str, Grid]]:
    """
    Parse shape-file text into (name, goal) pairs.

    Each record is a `name: <identifier>` header followed by exactly six lines of
    six characters from {'.', '#'}, top row first; records are separated by one blank line.

    Raises:
        ParseError: On any deviation from the format, naming the line
    """
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise ParseError(f"{source}: the shape file is empty")
    records = []
    index = 0
    while index < len(lines):
        header = lines[index]
        if not header.startswith("name:") or not header[5:].strip():
            raise ParseError(f"{source}:{index + 1}: expected 'name: <identifier>', got {header!r}")
        name = header[5:].strip()
        art = lines[index + 1:index + 1 + GRID_SIZE]
        if len(art) != GRID_SIZE:
            raise ParseError(f"{source}:{index + 1}: shape {name!r} needs {GRID_SIZE} rows")
        goal = empty_grid()
        for offset, row_text in enumerate(art):
            line_no = index + 2 + offset
            if len(row_text) != GRID_SIZE or set(row_text) - {".", "#"}:
                raise ParseError(f"{source}:{line_no}: rows must be {GRID_SIZE} characters of '.' or '#'")
            row = GRID_SIZE - 1 - offset
            goal[row] = [char == "#" for char in row_text]
        records.append((name, goal))
        index += 1 + GRID_SIZE
        if index < len(lines):
            if lines[index].strip():
                raise ParseError(f"{source}:{index + 1}: records must be separated by one blank line")
            index += 1
    return records


def build_catalog(records: Sequence[Tuple[str, Grid]], source: str) -> ShapeCatalog:
    """Validate every goal and compute its shortest build."""
    shapes = []
    for name, goal in records:
        check = validate_buildable(goal)
        if not check.buildable:
            raise UnbuildableShape(f"Shape {name!r} cannot be built from primitive blocks")
        shapes.append(Shape(name, goal, check.witness))
    return ShapeCatalog(shapes, source)


def load_catalog(path: str) -> ShapeCatalog:
    """
    Load and validate a shape file.

    Args:
        path (str): Path to a UTF-8 shape file

    Returns:
        ShapeCatalog: Shapes with min_primitives populated

    Raises:
        ParseError: If the file is malformed
        UnbuildableShape: If a shape fails validate_buildable
        OSError: If the file cannot be read
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    catalog = build_catalog(parse_catalog(text, path), path)
    logger.info("Loaded %d shapes from %s", len(catalog), path)
    return catalog


def format_catalog(catalog: Sequence[Shape]) -> str:
    """Serialize shapes in the shape-file format."""
    blocks = ["\n".join([f"name: {shape.name}"] + render_grid(shape.goal)) for shape in catalog]
    return "\n\n".join(blocks) + "\n"


def write_catalog(catalog: Sequence[Shape], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_catalog(catalog))


def builtin_default() -> ShapeCatalog:
    """The 11-shape experimental set: 3 upside-down U, 5 C-shapes, 3 L-shapes."""
    catalog = load_catalog(BUILTIN_CATALOG)
    catalog.source = "builtin"
    return catalog


def builtin_desk() -> ShapeCatalog:
    """Desk-scale sub-catalog holding one shape per family."""
    catalog = load_catalog(BUILTIN_DESK_CATALOG)
    catalog.source = "builtin_desk"
    return catalog


def resolve_catalog(spec: str) -> ShapeCatalog:
    """Map the `catalog` config value to a catalog."""
    if spec == "builtin":
        return builtin_default()
    if spec == "builtin_desk":
        return builtin_desk()
    return load_catalog(spec)


def random_goal(rng: np.random.Generator, n_blocks: int) -> Grid:
    """
    Sample a buildable goal by placing `n_blocks` uniformly random valid primitives.

    Args:
        rng (np.random.Generator): Seeded generator
        n_blocks (int): Number of blocks, 1..4

    Returns:
        Grid: A goal with exactly 2 * n_blocks occupied cells
    """
    if not 1 <= n_blocks <= 4:
        raise ValueError("n_blocks must be within 1..4")
    while True:
        grid = empty_grid()
        for _ in range(n_blocks):
            options = []
            for message_id in range(NUM_PRIMITIVES):
                try:
                    options.append(place_block(grid, primitive_action(message_id)).new_grid)
                except InvalidPlacement:
                    continue
            if not options:
                break
            grid = options[int(rng.integers(len(options)))]
        else:
            return grid
