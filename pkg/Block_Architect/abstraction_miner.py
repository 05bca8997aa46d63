"""
Sleep phase: find message substrings shared by recent successful episodes,
rank them, and promote the best one into the lexicon.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

from Block_Architect.data_model import BlockAction, Lexicon, message_label
from Block_Architect.dqn_agent import ReplayBuffer
from Block_Architect.utility import StrEnum

logger = logging.getLogger(__name__)


class NoPromotion(StrEnum):
    BELOW_THRESHOLD = "BelowThreshold"
    LEXICON_FULL = "LexiconFull"
    DUPLICATE = "Duplicate"


@dataclass(frozen=True)
class CandidateAbstraction:
    sequence: Tuple[int, ...]
    frequency: int
    score: float

    @property
    def rank_key(self) -> Tuple[float, int, Tuple[int, ...]]:
        return (-self.score, -len(self.sequence), self.sequence)

    def describe(self) -> str:
        return f"[{','.join(message_label(i) for i in self.sequence)}] freq={self.frequency} score={self.score:g}"


@dataclass(frozen=True)
class PromotionResult:
    lexicon: Lexicon
    message_id: Optional[int] = None
    reason: Optional[NoPromotion] = None

    @property
    def promoted(self) -> bool:
        return self.message_id is not None


@dataclass
class SleepResult:
    candidates: List[CandidateAbstraction] = field(default_factory=list)
    promotion: Optional[PromotionResult] = None
    candidate: Optional[CandidateAbstraction] = None

    @property
    def promoted(self) -> bool:
        return self.promotion is not None and self.promotion.promoted


def score(frequency: int, length: int) -> float:
    """Messages saved per use, times the number of uses."""
    return float(frequency * (length - 1))


def collect_sequences(buffer: ReplayBuffer, window: int, since_episode: int = 0) -> List[Tuple[int, ...]]:
    """
    Message sequences of the most recent `window` successful episodes, oldest first.

    Args:
        buffer (ReplayBuffer): Source of episodes
        window (int): Number of successful episodes to keep
        since_episode (int): Ignore episodes with a smaller id

    Returns:
        List[Tuple[int, ...]]: One tuple of message ids per episode
    """
    if window <= 0:
        return []
    episode_ids = buffer.episode_ids(since=since_episode, successful_only=True)[-window:]
    return [tuple(t.message_id for t in buffer.episode(eid)) for eid in episode_ids]


def _substrings(sequence: Sequence[int], min_len: int, max_len: int) -> Iterable[Tuple[int, ...]]:
    for length in range(min_len, min(max_len, len(sequence)) + 1):
        for start in range(len(sequence) - length + 1):
            yield tuple(sequence[start:start + length])


def mine(
        sequences: Sequence[Sequence[int]],
        min_len: int = 2,
        max_len: int = 6,
        *,
        min_frequency: int = 2,
        once_per_episode: bool = True
    ) -> List[CandidateAbstraction]:
    """
    Rank every contiguous substring of length min_len..max_len.

    Frequency counts episodes containing the substring (every occurrence when
    once_per_episode is False); substrings seen fewer than min_frequency times
    are dropped. Ranking is score desc, then length desc, then ids ascending.

    Returns:
        List[CandidateAbstraction]: Full ranking, best first
    """
    if min_len < 2 or max_len < min_len:
        raise ValueError("Require 2 <= min_len <= max_len")
    counts: Counter = Counter()
    for sequence in sequences:
        found = _substrings(sequence, min_len, max_len)
        counts.update(set(found) if once_per_episode else found)
    candidates = [
        CandidateAbstraction(substring, frequency, score(frequency, len(substring)))
        for substring, frequency in counts.items()
        if frequency >= min_frequency
    ]
    candidates.sort(key=lambda c: c.rank_key)
    return candidates


def promote(lexicon: Lexicon, candidate: CandidateAbstraction, score_threshold: float) -> PromotionResult:
    """
    Append the candidate as a new abstraction when it qualifies.

    The lexicon is updated in place; existing messages keep their meaning.

    Returns:
        PromotionResult: The new message id, or the NoPromotion reason
    """
    if candidate.score < score_threshold:
        return PromotionResult(lexicon, reason=NoPromotion.BELOW_THRESHOLD)
    if lexicon.is_full:
        return PromotionResult(lexicon, reason=NoPromotion.LEXICON_FULL)
    if lexicon.find_abstraction(candidate.sequence) is not None:
        return PromotionResult(lexicon, reason=NoPromotion.DUPLICATE)
    message = lexicon.add_abstraction(candidate.sequence)
    logger.info("Promoted %s (score %g)", lexicon.describe(message.id), candidate.score)
    return PromotionResult(lexicon, message_id=message.id)


def expand(lexicon: Lexicon, message_id: int) -> Tuple[BlockAction, ...]:
    """In-order primitive expansion; raises InactiveMessage for unknown ids."""
    return lexicon.expand(message_id)


def sleep(
        buffer: ReplayBuffer,
        lexicon: Lexicon,
        *,
        window: int,
        score_threshold: float,
        since_episode: int = 0,
        min_len: int = 2,
        max_len: int = 6,
        min_frequency: int = 2,
        once_per_episode: bool = True
    ) -> SleepResult:
    """
    One sleep phase: mine the recent successful episodes and promote at most one candidate.

    Duplicates are skipped; the walk ends at the first candidate below the
    threshold or when the lexicon is full.
    """
    sequences = collect_sequences(buffer, window, since_episode)
    candidates = mine(
        sequences, min_len, max_len,
        min_frequency=min_frequency, once_per_episode=once_per_episode
    )
    logger.info("Sleep: %d successful episodes, %d candidates", len(sequences), len(candidates))
    result = SleepResult(candidates)
    for candidate in candidates:
        promotion = promote(lexicon, candidate, score_threshold)
        if promotion.reason == NoPromotion.DUPLICATE:
            logger.debug("Skipping duplicate %s", candidate.describe())
            continue
        result.promotion = promotion
        result.candidate = candidate
        if not promotion.promoted:
            logger.info("No promotion: %s", promotion.reason)
        break
    return result
