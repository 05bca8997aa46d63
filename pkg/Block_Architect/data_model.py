from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple
from collections.abc import Sequence as SequenceABC

import numpy as np

from Block_Architect.utility import DEFAULT_M_MAX, GRID_SIZE, NUM_PRIMITIVES, Orientation

# A Grid is a (GRID_SIZE, GRID_SIZE) boolean array indexed [row, column - 1],
# row 0 being the bottom row.
Grid = np.ndarray


def empty_grid() -> Grid:
    """Return a fresh all-empty grid."""
    return np.zeros((GRID_SIZE, GRID_SIZE), dtype=bool)


def grid_to_bits(grid: Grid) -> int:
    """Pack a grid into an integer, bit i = cell i in row-major order, bottom row first."""
    return int(sum(1 << i for i, cell in enumerate(grid.reshape(-1)) if cell))


def grid_from_bits(bits: int) -> Grid:
    """Inverse of grid_to_bits."""
    cells = [(bits >> i) & 1 for i in range(GRID_SIZE * GRID_SIZE)]
    return np.array(cells, dtype=bool).reshape(GRID_SIZE, GRID_SIZE)


def grid_from_cells(cells) -> Grid:
    """Build a grid from (row, column) pairs with 1-based columns."""
    grid = empty_grid()
    for row, column in cells:
        grid[row, column - 1] = True
    return grid


def render_grid(grid: Grid) -> List[str]:
    """ASCII art of a grid, top row first, '#' for occupied cells."""
    return ["".join("#" if cell else "." for cell in grid[row]) for row in range(GRID_SIZE - 1, -1, -1)]


class LexiconError(Exception):
    """Base class for lexicon-related exceptions."""
    pass


class InactiveMessage(LexiconError):
    """Raised when a message id is not active in the lexicon."""
    pass


class LexiconFull(LexiconError):
    """Raised when appending to a lexicon that already holds M_max messages."""
    pass


@dataclass(frozen=True)
class BlockAction:
    """A single primitive block placement; position is the 1-based anchor column."""
    orientation: Orientation
    position: int

    def __post_init__(self) -> None:
        if not 1 <= self.position <= GRID_SIZE:
            raise ValueError(f"Block position must be within 1..{GRID_SIZE}, got {self.position}")

    @property
    def label(self) -> str:
        return f"{self.orientation.value}{self.position}"


@dataclass(frozen=True)
class Message:
    """
    A message of the architect's language.

    Primitive messages carry a BlockAction; abstractions carry the ordered ids
    of earlier messages they stand for.
    """
    id: int
    action: Optional[BlockAction] = None
    body: Tuple[int, ...] = ()

    @property
    def is_primitive(self) -> bool:
        return self.action is not None

    @property
    def label(self) -> str:
        return message_label(self.id)

    def to_json(self) -> Dict[str, Any]:
        if self.is_primitive:
            return {'id': self.id, 'action': self.action.label}
        return {'id': self.id, 'body': list(self.body)}


def primitive_action(message_id: int) -> BlockAction:
    """Map ids 0..5 to V1..V6 and 6..11 to H1..H6."""
    if not 0 <= message_id < NUM_PRIMITIVES:
        raise ValueError(f"{message_id} is not a primitive message id")
    orientation = Orientation.VERTICAL if message_id < GRID_SIZE else Orientation.HORIZONTAL
    return BlockAction(orientation, message_id % GRID_SIZE + 1)


def primitive_id(action: BlockAction) -> int:
    offset = 0 if action.orientation == Orientation.VERTICAL else GRID_SIZE
    return offset + action.position - 1


def message_label(message_id: int) -> str:
    """V1..V6, H1..H6 for primitives, A<id> for abstractions."""
    if message_id < NUM_PRIMITIVES:
        return primitive_action(message_id).label
    return f"A{message_id}"


class Lexicon(SequenceABC):
    """
    The ordered, append-only message alphabet, capped at `capacity` (M_max).
    Behaves like a read-only sequence of Message indexed by message id.
    """

    def __init__(self, capacity: int = DEFAULT_M_MAX) -> None:
        """
        Initialize a lexicon holding the 12 primitive messages.

        Args:
            capacity (int): Maximum number of messages, i.e. the Q-network output width

        Raises:
            ValueError: If capacity cannot hold the primitives
        """
        if capacity < NUM_PRIMITIVES:
            raise ValueError(f"Lexicon capacity must be at least {NUM_PRIMITIVES}")
        self.capacity = capacity
        self._messages: List[Message] = [
            Message(i, action=primitive_action(i)) for i in range(NUM_PRIMITIVES)
        ]
        self._expansions: Dict[int, Tuple[BlockAction, ...]] = {
            m.id: (m.action,) for m in self._messages
        }

    def __getitem__(self, message_id):
        return self._messages[message_id]

    def __len__(self) -> int:
        return len(self._messages)

    def __iter__(self) -> Iterator[Message]:
        return iter(self._messages)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Lexicon):
            return NotImplemented
        return self.capacity == other.capacity and self._messages == other._messages

    @property
    def active_count(self) -> int:
        return len(self._messages)

    @property
    def is_full(self) -> bool:
        return len(self._messages) >= self.capacity

    def is_active(self, message_id: int) -> bool:
        return 0 <= message_id < len(self._messages)

    def abstractions(self) -> List[Message]:
        return [m for m in self._messages if not m.is_primitive]

    def find_abstraction(self, body: Sequence[int]) -> Optional[Message]:
        """Return the abstraction whose body or primitive expansion equals `body`'s, if any."""
        body = tuple(body)
        try:
            expansion = tuple(a for i in body for a in self.expand(i))
        except InactiveMessage:
            return None
        for message in self.abstractions():
            if message.body == body or self._expansions[message.id] == expansion:
                return message
        return None

    def add_abstraction(self, body: Sequence[int]) -> Message:
        """
        Append a new abstraction standing for `body`.

        Args:
            body (Sequence[int]): Ids of active messages, at least two

        Returns:
            Message: The new message, with the next free id

        Raises:
            LexiconFull: If the lexicon already holds `capacity` messages
            InactiveMessage: If the body references an inactive id
            ValueError: If the body is shorter than two messages
        """
        body = tuple(int(i) for i in body)
        if len(body) < 2:
            raise ValueError("An abstraction needs at least two messages")
        if self.is_full:
            raise LexiconFull(f"Lexicon already holds {self.capacity} messages")
        for message_id in body:
            if not self.is_active(message_id):
                raise InactiveMessage(f"Message {message_id} is not active")
        message = Message(len(self._messages), body=body)
        self._messages.append(message)
        self._expansions[message.id] = tuple(a for i in body for a in self._expansions[i])
        return message

    def expand(self, message_id: int) -> Tuple[BlockAction, ...]:
        """
        Expand a message into its primitive block actions, in order.

        Raises:
            InactiveMessage: If the id is not active
        """
        if not self.is_active(message_id):
            raise InactiveMessage(f"Message {message_id} is not active")
        return self._expansions[message_id]

    def label(self, message_id: int) -> str:
        return self._messages[message_id].label

    def describe(self, message_id: int) -> str:
        """Human-readable definition, e.g. 'A12=[V1,V2]'."""
        message = self._messages[message_id]
        if message.is_primitive:
            return message.label
        return f"{message.label}=[{','.join(self.label(i) for i in message.body)}]"

    def parse_labels(self, text: str) -> Tuple[int, ...]:
        """Parse 'V1,V2,A12' into message ids."""
        by_label = {m.label: m.id for m in self._messages}
        ids = []
        for token in text.replace(" ", "").split(","):
            if token not in by_label:
                raise InactiveMessage(f"Unknown message label: {token!r}")
            ids.append(by_label[token])
        return tuple(ids)

    def copy(self) -> 'Lexicon':
        other = Lexicon(self.capacity)
        for message in self.abstractions():
            other.add_abstraction(message.body)
        return other

    def to_json(self) -> Dict[str, Any]:
        """Convert the lexicon to a JSON-serializable dict."""
        return {
            'capacity': self.capacity,
            'messages': [m.to_json() for m in self._messages]
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> 'Lexicon':
        """
        Rebuild a lexicon serialized with to_json.

        Raises:
            LexiconError: If primitives are missing or reordered
        """
        lexicon = cls(int(data['capacity']))
        messages = data['messages']
        for index, entry in enumerate(messages[:NUM_PRIMITIVES]):
            if entry.get('action') != lexicon.label(index):
                raise LexiconError(f"Primitive {index} must be {lexicon.label(index)}")
        for entry in messages[NUM_PRIMITIVES:]:
            message = lexicon.add_abstraction(entry['body'])
            if message.id != entry['id']:
                raise LexiconError(f"Abstraction ids must be contiguous, got {entry['id']}")
        return lexicon


@dataclass(frozen=True, eq=False)
class Transition:
    """One architect decision, with the reward the builder's execution earned."""
    goal: Grid
    state: Grid
    message_id: int
    reward: float
    next_state: Grid
    terminal: bool
    t: int
    episode_id: int = -1

    def with_episode(self, episode_id: int) -> 'Transition':
        return Transition(
            self.goal, self.state, self.message_id, self.reward,
            self.next_state, self.terminal, self.t, episode_id
        )

    def to_json(self) -> Dict[str, Any]:
        return {
            'goal': grid_to_bits(self.goal),
            'state': grid_to_bits(self.state),
            'message_id': self.message_id,
            'reward': self.reward,
            'next_state': grid_to_bits(self.next_state),
            'terminal': self.terminal,
            't': self.t,
            'episode_id': self.episode_id
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> 'Transition':
        return cls(
            goal=grid_from_bits(data['goal']),
            state=grid_from_bits(data['state']),
            message_id=int(data['message_id']),
            reward=float(data['reward']),
            next_state=grid_from_bits(data['next_state']),
            terminal=bool(data['terminal']),
            t=int(data['t']),
            episode_id=int(data['episode_id'])
        )


@dataclass
class EpisodeSummary:
    """Outcome of one rollout."""
    episode_id: int
    success: bool
    steps: int
    episode_return: float
    messages: Tuple[int, ...] = ()
    transitions: List[Transition] = field(default_factory=list, repr=False)
    losses: List[float] = field(default_factory=list, repr=False)

    @property
    def mean_loss(self) -> Optional[float]:
        if not self.losses:
            return None
        return float(np.mean(self.losses))
