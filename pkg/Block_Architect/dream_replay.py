"""
Dream phase: rewrite recent episodes with a freshly promoted abstraction,
re-run them through the environment for correct rewards, and train the
network on the shortened experience only.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from Block_Architect.data_model import Grid, Lexicon, Transition
from Block_Architect.dqn_agent import ArchitectAgent, fit_batch, sync_target
from Block_Architect.grid_env import ConstructionEnv
from Block_Architect.neural_net import Optimizer, QNetwork

logger = logging.getLogger(__name__)


@dataclass
class DreamResult:
    abstraction_id: int
    episodes_rewritten: int = 0
    transitions: List[Transition] = field(default_factory=list, repr=False)
    losses: List[float] = field(default_factory=list, repr=False)

    @property
    def final_loss(self) -> Optional[float]:
        return self.losses[-1] if self.losses else None


def _replace_once(sequence: Tuple[int, ...], body: Tuple[int, ...], abstraction_id: int) -> Tuple[int, ...]:
    out = []
    index = 0
    width = len(body)
    while index < len(sequence):
        if sequence[index:index + width] == body:
            out.append(abstraction_id)
            index += width
        else:
            out.append(sequence[index])
            index += 1
    return tuple(out)


def rewrite_episode(sequence: Sequence[int], abstraction_id: int, lexicon: Lexicon) -> Tuple[int, ...]:
    """
    Replace every occurrence of the abstraction's body, leftmost first and
    without overlap, repeating until nothing changes.

    Raises:
        InactiveMessage: If abstraction_id is not active
        ValueError: If abstraction_id names a primitive
    """
    lexicon.expand(abstraction_id)
    message = lexicon[abstraction_id]
    if message.is_primitive:
        raise ValueError(f"{message.label} is not an abstraction")
    current = tuple(sequence)
    while True:
        rewritten = _replace_once(current, message.body, abstraction_id)
        if rewritten == current:
            return current
        current = rewritten


def replay_with_rewrite(
        goal: Grid,
        sequence: Sequence[int],
        lexicon: Lexicon,
        env: ConstructionEnv
    ) -> List[Transition]:
    """
    Execute a message sequence from the empty grid with fresh time indices.

    Returns:
        List[Transition]: One transition per message, rewards recomputed
    """
    state = env.reset()
    transitions = []
    for t, message in enumerate(sequence):
        result = env.step(state, goal, message, lexicon, t)
        transitions.append(Transition(goal, state, message, result.reward, result.next_state, result.terminal, t))
        state = result.next_state
        if result.terminal:
            if t + 1 < len(sequence):
                logger.warning("Replay ended after %d of %d messages", t + 1, len(sequence))
            break
    return transitions


def dream_train(
        net: QNetwork,
        target_net: QNetwork,
        transitions: Sequence[Transition],
        optimizer: Optimizer,
        iterations: int,
        *,
        rng: np.random.Generator,
        lexicon: Lexicon,
        batch_size: int = 64,
        gamma: float = 1.0
    ) -> List[float]:
    """
    Mini-batch updates drawn only from `transitions`, with the target network held fixed.

    Returns:
        List[float]: The loss of every iteration
    """
    if not transitions:
        raise ValueError("Dream training needs at least one transition")
    losses = []
    for _ in range(iterations):
        batch = [transitions[i] for i in rng.integers(len(transitions), size=batch_size)]
        losses.append(fit_batch(net, target_net, batch, optimizer, lexicon, gamma))
    return losses


def dream(
        agent: ArchitectAgent,
        abstraction_id: int,
        env: ConstructionEnv,
        rng: np.random.Generator,
        *,
        since_episode: int = 0,
        iterations: int = 2000
    ) -> DreamResult:
    """
    Rewrite the agent's episodes since `since_episode`, train on the rewritten
    transitions, then merge them into the replay buffer as new episodes.

    Episodes in which the abstraction never occurs are left alone.
    """
    result = DreamResult(abstraction_id)
    rewritten_episodes = []
    for episode_id in agent.buffer.episode_ids(since=since_episode):
        episode = agent.buffer.episode(episode_id)
        original = tuple(t.message_id for t in episode)
        rewritten = rewrite_episode(original, abstraction_id, agent.lexicon)
        if rewritten == original:
            continue
        rewritten_episodes.append(replay_with_rewrite(episode[0].goal, rewritten, agent.lexicon, env))
    result.episodes_rewritten = len(rewritten_episodes)
    result.transitions = [t for episode in rewritten_episodes for t in episode]
    if not result.transitions:
        logger.info("Dream: no episode uses %s", agent.lexicon.describe(abstraction_id))
        return result

    logger.info(
        "Dream: %d episodes rewritten with %s, %d iterations",
        result.episodes_rewritten, agent.lexicon.describe(abstraction_id), iterations
    )
    agent.target_net = sync_target(agent.net)
    result.losses = dream_train(
        agent.net, agent.target_net, result.transitions, agent.optimizer, iterations,
        rng=rng, lexicon=agent.lexicon, batch_size=agent.batch_size, gamma=agent.gamma
    )
    agent.target_net = sync_target(agent.net)
    for episode in rewritten_episodes:
        agent.buffer.add_episode(episode)
    return result
