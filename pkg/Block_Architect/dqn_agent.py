"""
The architect's learning core: epsilon-greedy message selection over legal,
active messages, a ring replay buffer indexed by episode, Bellman targets from
a target network and mean-squared-error training steps.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from Block_Architect.data_model import EpisodeSummary, Grid, Lexicon, Transition
from Block_Architect.grid_env import ConstructionEnv, encode_observation, legal_messages
from Block_Architect.neural_net import (
    Optimizer, QNetwork, apply_update, backward, forward, forward_cache,
    network_from_json, network_to_json
)

logger = logging.getLogger(__name__)


class AgentError(Exception):
    """Base class for agent exceptions."""
    pass


class NoLegalMessage(AgentError):
    """Raised when no active message can be executed from the current state."""
    pass


class BufferTooSmall(AgentError):
    """Raised when a mini-batch is requested from a buffer holding fewer transitions."""
    pass


@dataclass(frozen=True)
class EpisodeSpan:
    start: int
    length: int
    success: bool


class ReplayBuffer:
    """
    Ring buffer of transitions with an episode index.

    Transitions carry absolute insertion numbers; an episode stays indexed only
    while all of its transitions are still held.
    """

    def __init__(self, capacity: int = 100_000) -> None:
        if capacity < 1:
            raise ValueError("Replay capacity must be positive")
        self.capacity = capacity
        self._storage: List[Transition] = []
        self._total = 0
        self._episodes: 'OrderedDict[int, EpisodeSpan]' = OrderedDict()
        self._next_episode_id = 0

    def __len__(self) -> int:
        return len(self._storage)

    @property
    def next_episode_id(self) -> int:
        return self._next_episode_id

    def add_episode(self, transitions: Sequence[Transition]) -> int:
        """
        Append one episode under a fresh id.

        Returns:
            int: The episode id stamped on every stored transition
        """
        episode_id = self._next_episode_id
        self._next_episode_id += 1
        if not transitions:
            return episode_id
        last = transitions[-1]
        success = bool(last.terminal and np.array_equal(last.next_state, last.goal))
        self._episodes[episode_id] = EpisodeSpan(self._total, len(transitions), success)
        for transition in transitions:
            self._append(transition.with_episode(episode_id))
        self._evict()
        return episode_id

    def _append(self, transition: Transition) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(transition)
        else:
            self._storage[self._total % self.capacity] = transition
        self._total += 1

    def _evict(self) -> None:
        oldest = self._total - len(self._storage)
        while self._episodes:
            episode_id, span = next(iter(self._episodes.items()))
            if span.start >= oldest:
                break
            del self._episodes[episode_id]

    def sample(self, rng: np.random.Generator, batch_size: int) -> List[Transition]:
        """
        Uniform mini-batch, drawn with replacement.

        Raises:
            BufferTooSmall: If fewer than batch_size transitions are held
        """
        if len(self._storage) < batch_size:
            raise BufferTooSmall(f"Buffer holds {len(self._storage)} transitions, batch needs {batch_size}")
        return [self._storage[i] for i in rng.integers(len(self._storage), size=batch_size)]

    def episode(self, episode_id: int) -> List[Transition]:
        span = self._episodes[episode_id]
        return [self._storage[(span.start + i) % self.capacity] for i in range(span.length)]

    def episode_ids(self, since: int = 0, successful_only: bool = False) -> List[int]:
        """Indexed episode ids >= since, in chronological order."""
        return [
            episode_id for episode_id, span in self._episodes.items()
            if episode_id >= since and (span.success or not successful_only)
        ]

    def is_successful(self, episode_id: int) -> bool:
        return self._episodes[episode_id].success

    def transitions(self) -> List[Transition]:
        """All held transitions, oldest first."""
        if len(self._storage) < self.capacity:
            return list(self._storage)
        pivot = self._total % self.capacity
        return self._storage[pivot:] + self._storage[:pivot]

    def to_json(self) -> Dict[str, Any]:
        return {
            'capacity': self.capacity,
            'total': self._total,
            'next_episode_id': self._next_episode_id,
            'transitions': [t.to_json() for t in self._storage],
            'episodes': [[eid, s.start, s.length, s.success] for eid, s in self._episodes.items()]
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> 'ReplayBuffer':
        buffer = cls(int(data['capacity']))
        buffer._storage = [Transition.from_json(t) for t in data['transitions']]
        buffer._total = int(data['total'])
        buffer._next_episode_id = int(data['next_episode_id'])
        for episode_id, start, length, success in data['episodes']:
            buffer._episodes[int(episode_id)] = EpisodeSpan(int(start), int(length), bool(success))
        return buffer


@dataclass
class EpsilonSchedule:
    """Multiplicative decay per episode with a floor; raised when a new message appears."""
    value: float = 1.0
    decay: float = 0.99995
    minimum: float = 0.05
    boost_to: float = 0.3

    def step(self) -> float:
        self.value = max(self.minimum, self.value * self.decay)
        return self.value

    def boost(self) -> float:
        self.value = max(self.value, self.boost_to)
        return self.value


def select_message(
        net: QNetwork,
        goal: Grid,
        state: Grid,
        lexicon: Lexicon,
        epsilon: float,
        rng: np.random.Generator,
        mask: Optional[np.ndarray] = None
    ) -> int:
    """
    Epsilon-greedy choice restricted to legal, active messages.

    Illegal messages are removed from the argmax rather than penalized; ties go
    to the lowest id.

    Raises:
        NoLegalMessage: If the state admits no message
    """
    if mask is None:
        mask = legal_messages(state, goal, lexicon)
    legal = np.flatnonzero(mask)
    if legal.size == 0:
        raise NoLegalMessage("No active message fits the current state")
    if rng.random() < epsilon:
        return int(legal[rng.integers(legal.size)])
    q_values = forward(net, encode_observation(goal, state))
    return int(np.argmax(np.where(mask, q_values, -np.inf)))


def td_targets(
        batch: Sequence[Transition],
        target_net: QNetwork,
        lexicon: Lexicon,
        gamma: float = 1.0
    ) -> np.ndarray:
    """Bellman targets r + gamma * max legal target-Q(next), or r for terminal transitions."""
    targets = np.array([t.reward for t in batch], dtype=np.float64)
    open_indices = [i for i, t in enumerate(batch) if not t.terminal]
    if not open_indices:
        return targets
    inputs = np.stack([encode_observation(batch[i].goal, batch[i].next_state) for i in open_indices])
    masks = np.stack([legal_messages(batch[i].next_state, batch[i].goal, lexicon) for i in open_indices])
    q_next = np.where(masks, forward(target_net, inputs), -np.inf).max(axis=1)
    bootstrap = np.where(np.isfinite(q_next), q_next, 0.0)
    targets[open_indices] += gamma * bootstrap
    return targets


def td_target(transition: Transition, target_net: QNetwork, lexicon: Lexicon, gamma: float = 1.0) -> float:
    return float(td_targets([transition], target_net, lexicon, gamma)[0])


def fit_batch(
        net: QNetwork,
        target_net: QNetwork,
        batch: Sequence[Transition],
        optimizer: Optimizer,
        lexicon: Lexicon,
        gamma: float = 1.0
    ) -> float:
    """
    One optimizer update on the squared TD error of the chosen messages.

    Returns:
        float: The batch mean squared error before the update
    """
    inputs = np.stack([encode_observation(t.goal, t.state) for t in batch])
    targets = td_targets(batch, target_net, lexicon, gamma)
    q_values, cache = forward_cache(net, inputs)
    rows = np.arange(len(batch))
    chosen = np.array([t.message_id for t in batch])
    error = q_values[rows, chosen] - targets
    output_grad = np.zeros_like(q_values)
    output_grad[rows, chosen] = 2.0 * error / len(batch)
    apply_update(net, optimizer, backward(net, inputs, output_grad, cache))
    return float(np.mean(error ** 2))


def train_step(
        net: QNetwork,
        target_net: QNetwork,
        buffer: ReplayBuffer,
        optimizer: Optimizer,
        batch_size: int,
        rng: np.random.Generator,
        lexicon: Lexicon,
        gamma: float = 1.0
    ) -> float:
    """
    Sample a uniform mini-batch from the buffer and apply one update.

    Raises:
        BufferTooSmall: If the buffer holds fewer than batch_size transitions
    """
    batch = buffer.sample(rng, batch_size)
    return fit_batch(net, target_net, batch, optimizer, lexicon, gamma)


def sync_target(net: QNetwork) -> QNetwork:
    """Deep copy used as the frozen bootstrap network."""
    return net.copy()


def run_episode(
        net: QNetwork,
        env: ConstructionEnv,
        goal: Grid,
        lexicon: Lexicon,
        epsilon: float,
        rng: np.random.Generator,
        buffer: Optional[ReplayBuffer] = None,
        on_step: Optional[Callable[[], Optional[float]]] = None
    ) -> EpisodeSummary:
    """
    Roll out one episode from the empty grid.

    Args:
        net (QNetwork): Policy network
        env (ConstructionEnv): Environment with the episode budget
        goal (Grid): A buildable goal
        lexicon (Lexicon): Active messages
        epsilon (float): Exploration rate
        rng (np.random.Generator): Exploration randomness
        buffer (Optional[ReplayBuffer]): Receives the episode under a fresh id; None for evaluation
        on_step (Optional[Callable]): Called after every message; a returned loss is recorded

    Returns:
        EpisodeSummary: success flag, steps, return and the stored transitions
    """
    state = env.reset()
    transitions: List[Transition] = []
    losses: List[float] = []
    success = False
    for t in range(env.max_messages):
        mask = env.legal_messages(state, goal, lexicon)
        try:
            message = select_message(net, goal, state, lexicon, epsilon, rng, mask)
        except NoLegalMessage:
            logger.debug("No legal message at step %d; episode fails", t)
            break
        result = env.step(state, goal, message, lexicon, t)
        transitions.append(Transition(goal, state, message, result.reward, result.next_state, result.terminal, t))
        if on_step is not None:
            loss = on_step()
            if loss is not None:
                losses.append(loss)
        state = result.next_state
        if result.terminal:
            success = result.success
            break
    episode_id = buffer.add_episode(transitions) if buffer is not None else -1
    if buffer is not None:
        transitions = [t.with_episode(episode_id) for t in transitions]
    return EpisodeSummary(
        episode_id=episode_id,
        success=success,
        steps=len(transitions),
        episode_return=float(sum(t.reward for t in transitions)),
        messages=tuple(t.message_id for t in transitions),
        transitions=transitions,
        losses=losses
    )


class ArchitectAgent:
    """
    Owns the networks, optimizer, replay buffer and exploration schedule of one replica.
    Strictly sequential: act, store, train.
    """

    def __init__(
            self,
            net: QNetwork,
            lexicon: Lexicon,
            optimizer: Optimizer,
            buffer: ReplayBuffer,
            schedule: EpsilonSchedule,
            *,
            gamma: float = 1.0,
            batch_size: int = 64,
            target_sync: int = 500
        ) -> None:
        self.net = net
        self.target_net = sync_target(net)
        self.lexicon = lexicon
        self.optimizer = optimizer
        self.buffer = buffer
        self.schedule = schedule
        self.gamma = gamma
        self.batch_size = batch_size
        self.target_sync = target_sync
        self.train_steps = 0

    def learn(self, rng: np.random.Generator, pool: Optional[Sequence[Transition]] = None) -> Optional[float]:
        """
        One train step from the buffer, or from `pool` when given; syncs the target on schedule.

        Returns:
            Optional[float]: The loss, or None while the buffer is smaller than a batch
        """
        if pool is None:
            if len(self.buffer) < self.batch_size:
                return None
            batch = self.buffer.sample(rng, self.batch_size)
        else:
            batch = [pool[i] for i in rng.integers(len(pool), size=self.batch_size)]
        loss = fit_batch(self.net, self.target_net, batch, self.optimizer, self.lexicon, self.gamma)
        self.train_steps += 1
        if self.train_steps % self.target_sync == 0:
            self.target_net = sync_target(self.net)
        return loss

    def play(self, env: ConstructionEnv, goal: Grid, rng: np.random.Generator) -> EpisodeSummary:
        """One training episode at the current epsilon, training once per message."""
        return run_episode(
            self.net, env, goal, self.lexicon, self.schedule.value, rng,
            buffer=self.buffer, on_step=lambda: self.learn(rng)
        )

    def state_to_json(self) -> Dict[str, Any]:
        return {
            'target_net': network_to_json(self.target_net),
            'buffer': self.buffer.to_json(),
            'epsilon': self.schedule.value,
            'train_steps': self.train_steps
        }

    def load_state_json(self, data: Dict[str, Any]) -> None:
        self.target_net = network_from_json(data['target_net'], self.net.layer_dims)
        self.buffer = ReplayBuffer.from_json(data['buffer'])
        self.schedule.value = float(data['epsilon'])
        self.train_steps = int(data['train_steps'])
