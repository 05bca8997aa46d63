"""
Experiment orchestration: pretraining on random goals, then the main loop of
wake episodes on catalog goals with periodic sleep/dream phases (mode=full),
greedy evaluation sweeps, metrics output and resumable checkpoints.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from Block_Architect.abstraction_miner import sleep
from Block_Architect.config import ConfigError, ExperimentConfig, format_config, parse_config, write_config
from Block_Architect.data_model import Lexicon, LexiconError
from Block_Architect.dqn_agent import ArchitectAgent, EpsilonSchedule, ReplayBuffer, run_episode
from Block_Architect.dream_replay import dream
from Block_Architect.grid_env import ConstructionEnv
from Block_Architect.metrics_handler import (
    CHECKPOINT_FILE, CONFIG_FILE, EventRecord, MetricsRecord, MetricsWriter, read_events
)
from Block_Architect.neural_net import (
    CheckpointError, Optimizer, QNetwork, architecture, init_network, network_from_json,
    read_checkpoint, save_checkpoint
)
from Block_Architect.shape_catalog import ShapeCatalog, random_goal, resolve_catalog
from Block_Architect.utility import NUM_PRIMITIVES, EventKind, Mode, Phase, slugify

logger = logging.getLogger(__name__)


@dataclass
class RunSummary:
    run_dir: str
    mode: Mode
    seed: int
    max_epochs: int
    epochs_to_solve: Optional[int]
    last_epoch: int
    lexicon: Lexicon
    checkpoint: str
    events: List[EventRecord] = field(default_factory=list, repr=False)

    @property
    def solved(self) -> bool:
        return self.epochs_to_solve is not None

    @property
    def outcome(self) -> str:
        if self.solved:
            return f"solved at epoch {self.epochs_to_solve}"
        return f"DNF at {self.max_epochs}"


def run_directory(config: ExperimentConfig) -> str:
    return os.path.join(config.out, slugify(f"{config.mode}-seed-{config.seed}"))


def evaluate(
        net: QNetwork,
        lexicon: Lexicon,
        catalog: ShapeCatalog,
        env: Optional[ConstructionEnv] = None
    ) -> Dict[str, bool]:
    """
    One greedy rollout per shape from the empty grid; nothing is stored or trained.

    Returns:
        Dict[str, bool]: Shape name to success flag, in catalog order
    """
    env = env or ConstructionEnv()
    rng = np.random.default_rng(0)
    return {
        shape.name: run_episode(net, env, shape.goal, lexicon, 0.0, rng).success
        for shape in catalog
    }


def resolve_preload(config: ExperimentConfig, catalog: ShapeCatalog) -> List[Tuple[int, ...]]:
    """
    Abstraction bodies for mode=best, in promotion order.

    Explicit `preload` entries may refer to earlier entries by label (A12, ...);
    an empty `preload` means the shortest build of every catalog shape.
    Duplicates are dropped.
    """
    entries = config.preload_bodies()
    if entries:
        scratch = Lexicon(NUM_PRIMITIVES + len(entries))
        bodies = []
        for entry in entries:
            body = scratch.parse_labels(entry)
            if scratch.find_abstraction(body) is None:
                scratch.add_abstraction(body)
                bodies.append(body)
        return bodies
    bodies = []
    for shape in catalog:
        if len(shape.witness) >= 2 and shape.witness not in bodies:
            bodies.append(shape.witness)
    return bodies


class ExperimentRunner:
    """
    A single seeded run. Strictly sequential; all state needed to continue a
    run bit for bit is written to the run checkpoint.
    """

    def __init__(self, config: ExperimentConfig, run_dir: Optional[str] = None, progress: bool = False,
                 append: bool = False) -> None:
        """
        Args:
            config (ExperimentConfig): Validated configuration
            run_dir (Optional[str]): Output directory; defaults to <out>/<mode>-seed-<seed>
            progress (bool): Show a tqdm progress bar
            append (bool): Extend existing CSV files instead of recreating them

        Raises:
            ConfigError: If the preload list cannot be parsed
            CatalogError: If the catalog cannot be loaded
        """
        self.catalog = resolve_catalog(config.catalog)
        preload: List[Tuple[int, ...]] = []
        if config.mode == Mode.BEST:
            try:
                preload = resolve_preload(config, self.catalog)
            except (ValueError, LexiconError) as e:
                raise ConfigError(f"Invalid preload: {e}") from e
            needed = NUM_PRIMITIVES + len(preload)
            if needed > config.m_max:
                logger.warning("Widening m_max from %d to %d to hold %d preloaded abstractions",
                               config.m_max, needed, len(preload))
                config = config.replace(m_max=needed)
        self.config = config
        self.run_dir = run_dir or run_directory(config)
        self.progress = progress
        self.env = ConstructionEnv(config.max_messages)
        self.rng = np.random.default_rng(config.seed)

        lexicon = Lexicon(config.m_max)
        for body in preload:
            lexicon.add_abstraction(body)
        net = init_network(config.seed, layer_dims=architecture(config.m_max, config.hidden_layers))
        self.agent = ArchitectAgent(
            net, lexicon,
            Optimizer(config.optimizer, config.learning_rate),
            ReplayBuffer(config.replay_capacity),
            EpsilonSchedule(config.epsilon_start, config.epsilon_decay, config.epsilon_min, config.epsilon_boost),
            gamma=config.gamma,
            batch_size=config.batch_size,
            target_sync=config.target_sync
        )
        self.phase = Phase.PRETRAIN if config.pretrain_epochs > 0 else Phase.WAKE
        self.epoch = 0
        self.streak = 0
        self.solved_at: Optional[int] = None
        self.wake_start_episode = 0

        os.makedirs(self.run_dir, exist_ok=True)
        write_config(config, os.path.join(self.run_dir, CONFIG_FILE))
        self.writer = MetricsWriter(self.run_dir, append=append)
        if preload:
            logger.info("Preloaded %s", ", ".join(lexicon.describe(m.id) for m in lexicon.abstractions()))

    @property
    def checkpoint_path(self) -> str:
        return os.path.join(self.run_dir, CHECKPOINT_FILE)

    @property
    def finished(self) -> bool:
        if self.solved_at is not None:
            return True
        return self.phase == Phase.WAKE and self.epoch >= self.config.max_epochs

    @property
    def epochs_done(self) -> int:
        """Epochs completed across both phases."""
        if self.phase == Phase.PRETRAIN:
            return self.epoch
        return self.config.pretrain_epochs + self.epoch

    def _event(self, kind: EventKind, detail: str = "") -> None:
        self.writer.write(EventRecord(self.epoch, kind, detail))

    def _next_goal(self) -> Tuple[str, np.ndarray]:
        if self.phase == Phase.PRETRAIN:
            n_blocks = int(self.rng.integers(self.config.pretrain_min_blocks, self.config.pretrain_max_blocks + 1))
            return f"random_{n_blocks}", random_goal(self.rng, n_blocks)
        shape = self.catalog[int(self.rng.integers(len(self.catalog)))]
        return shape.name, shape.goal

    def _train_epoch(self) -> None:
        goal_name, goal = self._next_goal()
        epsilon = self.agent.schedule.value
        summary = self.agent.play(self.env, goal, self.rng)
        self.agent.schedule.step()
        self.epoch += 1
        self.writer.write(MetricsRecord(
            epoch=self.epoch,
            phase=self.phase,
            goal=goal_name,
            success=summary.success,
            steps=summary.steps,
            episode_return=summary.episode_return,
            epsilon=epsilon,
            lexicon_size=self.agent.lexicon.active_count,
            mean_loss=summary.mean_loss
        ))
        if summary.success:
            self.writer.write_episode(summary.episode_id, summary.messages)
        logger.debug("Epoch %d (%s) %s: success=%s steps=%d return=%.4f",
                     self.epoch, self.phase, goal_name, summary.success, summary.steps, summary.episode_return)

    def _end_pretraining(self) -> None:
        logger.info("Pretraining finished after %d epochs", self.epoch)
        self.writer.flush()
        self.phase = Phase.WAKE
        self.epoch = 0
        self.wake_start_episode = self.agent.buffer.next_episode_id

    def _sleep_and_dream(self) -> None:
        config = self.config
        result = sleep(
            self.agent.buffer, self.agent.lexicon,
            window=config.window,
            score_threshold=config.score_threshold,
            since_episode=self.wake_start_episode,
            min_len=config.min_len,
            max_len=config.max_len,
            min_frequency=config.min_frequency,
            once_per_episode=config.once_per_episode
        )
        if result.promoted:
            message_id = result.promotion.message_id
            definition = self.agent.lexicon.describe(message_id)
            self._event(EventKind.PROMOTION, f"{definition};score={result.candidate.score:g}")
            self._event(EventKind.DREAM_START, definition)
            dreamt = dream(
                self.agent, message_id, self.env, self.rng,
                since_episode=self.wake_start_episode,
                iterations=config.dream_iterations
            )
            final_loss = "" if dreamt.final_loss is None else f";loss={dreamt.final_loss!r}"
            self._event(EventKind.DREAM_END, f"episodes={dreamt.episodes_rewritten}{final_loss}")
            self.agent.schedule.boost()
        self.wake_start_episode = self.agent.buffer.next_episode_id
        self.writer.flush()

    def _evaluate(self) -> None:
        results = evaluate(self.agent.net, self.agent.lexicon, self.catalog, self.env)
        solved = sum(results.values())
        if solved == len(results):
            self.streak += 1
            self._event(EventKind.EVAL_PASS, f"streak={self.streak}")
        else:
            self.streak = 0
        logger.info("Epoch %d: evaluation %d/%d shapes, streak %d", self.epoch, solved, len(results), self.streak)
        if self.streak >= self.config.eval_consecutive:
            self.solved_at = self.epoch
            self._event(EventKind.SOLVE, f"epoch={self.epoch}")
            logger.info("Solved at epoch %d", self.epoch)
        self.writer.flush()

    def _after_wake_epoch(self) -> None:
        config = self.config
        if config.mode == Mode.FULL and self.epoch % config.wake_phase_len == 0:
            self._sleep_and_dream()
        if self.epoch % config.eval_interval == 0:
            self._evaluate()
        if config.checkpoint_interval and self.epoch % config.checkpoint_interval == 0 and not self.finished:
            self.save_checkpoint()

    def run(self, max_steps: Optional[int] = None) -> RunSummary:
        """
        Train until solved or max_epochs, or until `max_steps` more epochs have run.

        A paused run leaves a checkpoint that `resume` continues from.
        """
        total = self.config.pretrain_epochs + self.config.max_epochs
        steps = 0
        with tqdm(total=total, initial=self.epochs_done, unit="epoch", disable=None if self.progress else True,
                  desc=f"{self.config.mode} seed {self.config.seed}") as bar:
            while not self.finished and (max_steps is None or steps < max_steps):
                if self.phase == Phase.PRETRAIN and self.epoch == 0:
                    logger.info("Pretraining for %d epochs", self.config.pretrain_epochs)
                self._train_epoch()
                steps += 1
                bar.update(1)
                if self.phase == Phase.PRETRAIN:
                    if self.epoch >= self.config.pretrain_epochs:
                        self._end_pretraining()
                else:
                    self._after_wake_epoch()
                    if self.epoch % self.config.eval_interval == 0:
                        bar.set_postfix(eps=f"{self.agent.schedule.value:.3f}", streak=self.streak,
                                        lexicon=self.agent.lexicon.active_count)
        if self.finished and self.solved_at is None:
            logger.info("DNF at %d epochs", self.config.max_epochs)
        self.save_checkpoint()
        return self.summary()

    def close(self) -> None:
        self.writer.close()

    def summary(self) -> RunSummary:
        self.writer.flush()
        return RunSummary(
            run_dir=self.run_dir,
            mode=self.config.mode,
            seed=self.config.seed,
            max_epochs=self.config.max_epochs,
            epochs_to_solve=self.solved_at,
            last_epoch=self.epoch if self.phase == Phase.WAKE else 0,
            lexicon=self.agent.lexicon.copy(),
            checkpoint=self.checkpoint_path,
            events=read_events(self.run_dir)
        )

    def _state_to_json(self) -> Dict[str, Any]:
        return {
            'config': format_config(self.config),
            'phase': str(self.phase),
            'epoch': self.epoch,
            'streak': self.streak,
            'solved_at': self.solved_at,
            'wake_start_episode': self.wake_start_episode,
            'rng': self.rng.bit_generator.state,
            'agent': self.agent.state_to_json(),
            'file_offsets': self.writer.offsets()
        }

    def save_checkpoint(self, path: Optional[str] = None) -> str:
        path = path or self.checkpoint_path
        save_checkpoint(self.agent.net, self.agent.lexicon, path, self.agent.optimizer,
                        extra={'run': self._state_to_json()})
        return path

    @classmethod
    def resume(cls, path: str, progress: bool = False) -> 'ExperimentRunner':
        """
        Rebuild a runner from a run checkpoint; rows written after it are discarded.

        Raises:
            CheckpointError: If the file is not a run checkpoint of a supported version
        """
        document = read_checkpoint(path)
        if 'run' not in document:
            raise CheckpointError(f"{path} holds no training state to resume")
        state = document['run']
        config = parse_config(state['config'], path)
        runner = cls(config, os.path.dirname(os.path.abspath(path)), progress, append=True)
        agent = runner.agent
        agent.net = network_from_json(document, agent.net.layer_dims)
        agent.lexicon = Lexicon.from_json(document['lexicon'])
        agent.optimizer = Optimizer.from_json(document['optimizer_state'])
        agent.load_state_json(state['agent'])
        runner.phase = Phase(state['phase'])
        runner.epoch = int(state['epoch'])
        runner.streak = int(state['streak'])
        runner.solved_at = state['solved_at']
        runner.wake_start_episode = int(state['wake_start_episode'])
        runner.rng.bit_generator.state = state['rng']
        runner.writer.truncate(state['file_offsets'])
        logger.info("Resumed %s at %s epoch %d", runner.run_dir, runner.phase, runner.epoch)
        return runner


def run_experiment(config: ExperimentConfig, run_dir: Optional[str] = None, progress: bool = False) -> RunSummary:
    """
    Execute one run to completion.

    Returns:
        RunSummary: epochs_to_solve or DNF, the event log and the final checkpoint path
    """
    runner = ExperimentRunner(config, run_dir, progress)
    try:
        return runner.run()
    finally:
        runner.close()


def run_replicas(config: ExperimentConfig, replicas: int) -> List[RunSummary]:
    """
    Independent runs with seeds seed, seed+1, ..., in separate processes and run directories.

    Returns:
        List[RunSummary]: Ordered by seed
    """
    configs = [config.replace(seed=config.seed + offset) for offset in range(replicas)]
    if replicas == 1:
        return [run_experiment(configs[0])]
    summaries = []
    with ProcessPoolExecutor(max_workers=min(replicas, os.cpu_count() or 1)) as executor:
        futures = {executor.submit(run_experiment, c): c for c in configs}
        for future in as_completed(futures):
            summary = future.result()
            logger.info("Replica seed %d: %s", summary.seed, summary.outcome)
            summaries.append(summary)
    return sorted(summaries, key=lambda s: s.seed)
