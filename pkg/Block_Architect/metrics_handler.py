"""
Run-directory files: metrics.csv, events.csv and episodes.csv written row by row,
their readers, and the plain-text run report.
"""

import csv
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, IO, List, Optional, Sequence, Tuple, Union

from Block_Architect.config import ConfigError, ExperimentConfig, load_config
from Block_Architect.data_model import Lexicon
from Block_Architect.neural_net import CheckpointError, read_checkpoint
from Block_Architect.utility import EventKind, Phase, setup_template, sparkline

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
EVENTS_FILE = "events.csv"
EPISODES_FILE = "episodes.csv"
CONFIG_FILE = "config.txt"
CHECKPOINT_FILE = "checkpoint.json"

METRICS_HEADER = ("epoch", "phase", "goal", "success", "steps", "return", "epsilon", "lexicon_size", "mean_loss")
EVENTS_HEADER = ("epoch", "event", "detail")
EPISODES_HEADER = ("episode_id", "step", "message_id")


class MetricsError(Exception):
    """Base class for run-directory exceptions."""
    pass


class MissingRun(MetricsError):
    """Raised when a run directory or one of its required files does not exist."""
    pass


class MalformedFile(MetricsError):
    """Raised when a CSV file does not follow its schema."""
    pass


@dataclass(frozen=True)
class MetricsRecord:
    """One training episode."""
    epoch: int
    phase: Phase
    goal: str
    success: bool
    steps: int
    episode_return: float
    epsilon: float
    lexicon_size: int
    mean_loss: Optional[float] = None

    def to_row(self) -> Dict[str, str]:
        return {
            'epoch': str(self.epoch),
            'phase': str(self.phase),
            'goal': self.goal,
            'success': "1" if self.success else "0",
            'steps': str(self.steps),
            'return': repr(self.episode_return),
            'epsilon': repr(self.epsilon),
            'lexicon_size': str(self.lexicon_size),
            'mean_loss': "" if self.mean_loss is None else repr(self.mean_loss)
        }

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> 'MetricsRecord':
        return cls(
            epoch=int(row['epoch']),
            phase=Phase(row['phase']),
            goal=row['goal'],
            success=row['success'] == "1",
            steps=int(row['steps']),
            episode_return=float(row['return']),
            epsilon=float(row['epsilon']),
            lexicon_size=int(row['lexicon_size']),
            mean_loss=float(row['mean_loss']) if row['mean_loss'] else None
        )


@dataclass(frozen=True)
class EventRecord:
    epoch: int
    event: EventKind
    detail: str = ""

    def to_row(self) -> Dict[str, str]:
        return {'epoch': str(self.epoch), 'event': str(self.event), 'detail': self.detail}

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> 'EventRecord':
        return cls(int(row['epoch']), EventKind(row['event']), row['detail'])


Record = Union[MetricsRecord, EventRecord]


class MetricsWriter:
    """
    Writes rows to the CSV files of one run directory.

    With `append` the files are extended and headers are written only when a
    file is new or empty; otherwise every file is recreated.
    """

    def __init__(self, run_dir: str, append: bool = True) -> None:
        os.makedirs(run_dir, exist_ok=True)
        self.run_dir = run_dir
        self._files: Dict[str, IO[str]] = {}
        self._writers: Dict[str, csv.DictWriter] = {}
        for name, header in ((METRICS_FILE, METRICS_HEADER), (EVENTS_FILE, EVENTS_HEADER),
                             (EPISODES_FILE, EPISODES_HEADER)):
            handle = open(os.path.join(run_dir, name), "a" if append else "w", encoding="utf-8", newline="")
            writer = csv.DictWriter(handle, fieldnames=header, lineterminator="\n")
            if handle.tell() == 0:
                writer.writeheader()
            self._files[name] = handle
            self._writers[name] = writer

    def __enter__(self) -> 'MetricsWriter':
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def write(self, record: Record) -> None:
        name = METRICS_FILE if isinstance(record, MetricsRecord) else EVENTS_FILE
        self._writers[name].writerow(record.to_row())

    def write_episode(self, episode_id: int, messages: Sequence[int]) -> None:
        """Log the message sequence of a successful episode."""
        writer = self._writers[EPISODES_FILE]
        for step, message_id in enumerate(messages):
            writer.writerow({'episode_id': episode_id, 'step': step, 'message_id': message_id})

    def flush(self) -> None:
        for handle in self._files.values():
            handle.flush()

    def offsets(self) -> Dict[str, int]:
        """Flush and return the current size of every file, for checkpointing."""
        self.flush()
        return {name: handle.tell() for name, handle in self._files.items()}

    def truncate(self, offsets: Dict[str, int]) -> None:
        """Drop rows written after a checkpoint."""
        self.flush()
        for name, offset in offsets.items():
            handle = self._files[name]
            handle.seek(offset)
            handle.truncate()

    def close(self) -> None:
        for handle in self._files.values():
            handle.close()
        self._files.clear()


def write_metrics(record: Record, run_dir: str) -> None:
    """Append a single record to its file in run_dir."""
    with MetricsWriter(run_dir) as writer:
        writer.write(record)


def _read_rows(path: str, header: Tuple[str, ...]) -> List[Dict[str, str]]:
    if not os.path.isfile(path):
        raise MissingRun(f"{path} does not exist")
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != header:
            raise MalformedFile(f"{path}: expected header {','.join(header)}")
        return list(reader)


def _parse_rows(path: str, header: Tuple[str, ...], parse) -> List[Any]:
    records = []
    for line_no, row in enumerate(_read_rows(path, header), start=2):
        try:
            records.append(parse(row))
        except (ValueError, TypeError, KeyError) as e:
            raise MalformedFile(f"{path}:{line_no}: {e}") from e
    return records


def read_metrics(run_dir: str) -> List[MetricsRecord]:
    return _parse_rows(os.path.join(run_dir, METRICS_FILE), METRICS_HEADER, MetricsRecord.from_row)


def read_events(run_dir: str) -> List[EventRecord]:
    return _parse_rows(os.path.join(run_dir, EVENTS_FILE), EVENTS_HEADER, EventRecord.from_row)


def read_episode_log(path: str) -> List[Tuple[int, ...]]:
    """
    Read an `episode_id,step,message_id` log into message sequences.

    Episodes keep the order of their first row; messages are ordered by step.

    Raises:
        MissingRun: If the file does not exist
        MalformedFile: On a wrong header or non-integer fields
    """
    rows = _parse_rows(
        path, EPISODES_HEADER,
        lambda row: (int(row['episode_id']), int(row['step']), int(row['message_id']))
    )
    episodes: Dict[int, List[Tuple[int, int]]] = {}
    for episode_id, step, message_id in rows:
        episodes.setdefault(episode_id, []).append((step, message_id))
    return [tuple(m for _, m in sorted(steps)) for steps in episodes.values()]


def epochs_to_solve(events: Sequence[EventRecord], eval_interval: int, eval_consecutive: int) -> Optional[int]:
    """
    Recompute the solve epoch from evaluation passes: the epoch closing the
    first run of eval_consecutive passes at consecutive sweeps.
    """
    streak = 0
    previous = None
    for event in events:
        if event.event != EventKind.EVAL_PASS:
            continue
        streak = streak + 1 if previous is not None and event.epoch - previous == eval_interval else 1
        previous = event.epoch
        if streak >= eval_consecutive:
            return event.epoch
    return None


def success_buckets(records: Sequence[MetricsRecord], bucket: int) -> List[Tuple[int, int, float]]:
    """Main-loop success rate per `bucket` epochs as (first_epoch, last_epoch, rate)."""
    totals: Dict[int, List[int]] = {}
    for record in records:
        if record.phase != Phase.WAKE:
            continue
        index = (record.epoch - 1) // bucket
        counts = totals.setdefault(index, [0, 0])
        counts[0] += record.success
        counts[1] += 1
    return [
        (index * bucket + 1, (index + 1) * bucket, successes / count)
        for index, (successes, count) in sorted(totals.items())
    ]


def _final_abstractions(run_dir: str, events: Sequence[EventRecord]) -> List[str]:
    path = os.path.join(run_dir, CHECKPOINT_FILE)
    if os.path.isfile(path):
        try:
            lexicon = Lexicon.from_json(read_checkpoint(path)['lexicon'])
            return [lexicon.describe(m.id) for m in lexicon.abstractions()]
        except (CheckpointError, KeyError) as e:
            logger.warning("Ignoring unreadable checkpoint %s: %s", path, e)
    return [e.detail.split(";", 1)[0] for e in events if e.event == EventKind.PROMOTION]


def report(run_dir: str, bucket: int = 10_000) -> str:
    """
    Render the plain-text summary of a run directory.

    Raises:
        MissingRun: If the directory or its config/metrics/events files are absent
        MalformedFile: If a CSV file does not follow its schema
    """
    if not os.path.isdir(run_dir):
        raise MissingRun(f"{run_dir} is not a run directory")
    config_path = os.path.join(run_dir, CONFIG_FILE)
    if not os.path.isfile(config_path):
        raise MissingRun(f"{config_path} does not exist")
    try:
        config: ExperimentConfig = load_config(config_path)
    except ConfigError as e:
        raise MalformedFile(str(e)) from e
    metrics = read_metrics(run_dir)
    events = read_events(run_dir)
    buckets = success_buckets(metrics, bucket)
    template = setup_template(os.path.join(os.path.dirname(__file__), "report.txt"))
    return template.render(
        run_dir=run_dir,
        bucket=bucket,
        config=config,
        epochs_to_solve=epochs_to_solve(events, config.eval_interval, config.eval_consecutive),
        last_epoch=max((r.epoch for r in metrics if r.phase == Phase.WAKE), default=0),
        promotions=[e for e in events if e.event == EventKind.PROMOTION],
        abstractions=_final_abstractions(run_dir, events),
        buckets=buckets,
        spark=sparkline([rate for _, _, rate in buckets])
    )
