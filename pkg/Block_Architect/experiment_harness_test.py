import os
import shutil

import numpy as np
import pytest

from Block_Architect.config import ConfigError, ExperimentConfig
from Block_Architect.data_model import Lexicon
from Block_Architect.experiment_harness import (
    ExperimentRunner, RunSummary, evaluate, resolve_preload, run_directory, run_experiment, run_replicas
)
from Block_Architect.metrics_handler import (
    CHECKPOINT_FILE, EVENTS_FILE, METRICS_FILE, epochs_to_solve, read_events, read_metrics
)
from Block_Architect.neural_net import CheckpointError, QNetwork, init_network, load_checkpoint, save_checkpoint
from Block_Architect.shape_catalog import builtin_default, builtin_desk
from Block_Architect.utility import EventKind, Mode, Phase


def tiny(**changes):
    """Desk-scale settings that keep a whole run well under a second per hundred epochs."""
    config = ExperimentConfig(
        hidden_layers=(16,),
        pretrain_epochs=30,
        max_epochs=60,
        wake_phase_len=20,
        window=20,
        eval_interval=20,
        batch_size=8,
        replay_capacity=500,
        target_sync=10,
        dream_iterations=5,
        score_threshold=1.0,
        catalog="builtin_desk"
    )
    return config.replace(**changes)


def read_bytes(run_dir, name):
    with open(os.path.join(run_dir, name), "rb") as f:
        return f.read()


def oracle_net(catalog, lexicon):
    """One hidden unit per shape that fires only on its own goal and votes for that shape's abstraction."""
    hidden = np.zeros((72, len(catalog)))
    hidden_bias = np.zeros(len(catalog))
    head = np.zeros((len(catalog), lexicon.capacity))
    for index, shape in enumerate(catalog):
        cells = shape.goal.ravel()
        hidden[:36, index] = np.where(cells, 1.0, -1.0)
        hidden_bias[index] = -(cells.sum() - 1.0)
        head[index, lexicon.find_abstraction(shape.witness).id] = 10.0
    return QNetwork([hidden, head], [hidden_bias, np.zeros(lexicon.capacity)])


def test_run_directory():
    config = ExperimentConfig(mode=Mode.WORST, seed=3, out="results")
    assert run_directory(config) == os.path.join("results", "worst-seed-3")


def test_run_summary_outcome():
    summary = RunSummary("runs/x", Mode.FULL, 0, 80_000, None, 80_000, Lexicon(), "runs/x/checkpoint.json")
    assert not summary.solved
    assert summary.outcome == "DNF at 80000"
    summary.epochs_to_solve = 17_500
    assert summary.outcome == "solved at epoch 17500"


class TestEvaluate:

    def test_untrained_net_reports_every_shape(self):
        catalog = builtin_default()
        results = evaluate(init_network(0, layer_dims=[72, 16, 20]), Lexicon(), catalog)
        assert list(results) == [shape.name for shape in catalog]
        assert all(isinstance(flag, bool) for flag in results.values())

    def test_constructed_oracle_builds_every_shape(self):
        catalog = builtin_default()
        bodies = resolve_preload(ExperimentConfig(mode=Mode.BEST), catalog)
        lexicon = Lexicon(12 + len(bodies))
        for body in bodies:
            lexicon.add_abstraction(body)
        results = evaluate(oracle_net(catalog, lexicon), lexicon, catalog)
        assert all(results.values())
        assert len(results) == 11

    def test_evaluation_has_no_side_effects(self, tmp_path):
        runner = ExperimentRunner(tiny(pretrain_epochs=0), str(tmp_path))
        try:
            runner.run(max_steps=10)
            buffer_size = len(runner.agent.buffer)
            state = runner.rng.bit_generator.state
            before = [p.copy() for p in runner.agent.net.parameters()]
            rows = len(read_metrics(str(tmp_path)))
            evaluate(runner.agent.net, runner.agent.lexicon, runner.catalog, runner.env)
            assert len(runner.agent.buffer) == buffer_size
            assert runner.rng.bit_generator.state == state
            assert all(np.array_equal(a, b) for a, b in zip(before, runner.agent.net.parameters()))
            assert len(read_metrics(str(tmp_path))) == rows
        finally:
            runner.close()


class TestPreload:

    def test_default_preload_is_catalog_witnesses(self):
        bodies = resolve_preload(ExperimentConfig(mode=Mode.BEST), builtin_desk())
        assert bodies == [shape.witness for shape in builtin_desk()]

    def test_explicit_preload_with_nested_label(self):
        config = ExperimentConfig(mode=Mode.BEST, preload="V1,V2,H1; A12,V3; V1,V2,H1")
        assert resolve_preload(config, builtin_desk()) == [(0, 1, 6), (12, 2)]

    def test_bad_preload_is_a_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentRunner(tiny(mode=Mode.BEST, preload="V1,Q7"), str(tmp_path))
        with pytest.raises(ConfigError):
            ExperimentRunner(tiny(mode=Mode.BEST, preload="V1,A12"), str(tmp_path))

    def test_widens_output_for_large_preload(self, tmp_path):
        runner = ExperimentRunner(tiny(mode=Mode.BEST, catalog="builtin"), str(tmp_path))
        try:
            assert runner.config.m_max == 23
            assert runner.agent.net.output_size == 23
            assert runner.agent.lexicon.active_count == 23
        finally:
            runner.close()


class TestModes:

    def test_worst_mode_never_promotes(self, tmp_path):
        summary = run_experiment(tiny(mode=Mode.WORST), str(tmp_path))
        assert summary.lexicon.active_count == 12
        assert not any(e.event == EventKind.PROMOTION for e in summary.events)
        records = read_metrics(str(tmp_path))
        assert len(records) == 90
        assert {r.lexicon_size for r in records} == {12}
        assert [r.epoch for r in records if r.phase == Phase.PRETRAIN] == list(range(1, 31))
        assert [r.epoch for r in records if r.phase == Phase.WAKE] == list(range(1, 61))

    def test_best_mode_starts_with_preload_and_never_mines(self, tmp_path):
        summary = run_experiment(tiny(mode=Mode.BEST), str(tmp_path))
        assert summary.lexicon.active_count == 15
        assert [m.body for m in summary.lexicon.abstractions()] == [s.witness for s in builtin_desk()]
        assert not any(e.event == EventKind.PROMOTION for e in summary.events)
        assert {r.lexicon_size for r in read_metrics(str(tmp_path))} == {15}

    def test_full_mode_lexicon_grows_only_at_sleep(self, tmp_path):
        summary = run_experiment(tiny(mode=Mode.FULL, score_threshold=0.0, min_frequency=1), str(tmp_path))
        promotions = [e for e in summary.events if e.event == EventKind.PROMOTION]
        assert all(e.epoch % 20 == 0 for e in promotions)
        assert summary.lexicon.active_count == 12 + len(promotions)
        for event in promotions:
            assert event.detail.startswith("A")
            assert ";score=" in event.detail

    def test_solves_with_a_perfect_policy(self, tmp_path):
        config = tiny(mode=Mode.BEST, hidden_layers=(3,), learning_rate=1e-12, pretrain_epochs=0, max_epochs=100)
        runner = ExperimentRunner(config, str(tmp_path))
        try:
            runner.agent.net = oracle_net(runner.catalog, runner.agent.lexicon)
            runner.agent.target_net = runner.agent.net.copy()
            summary = runner.run()
        finally:
            runner.close()
        assert summary.solved
        assert summary.epochs_to_solve == 60
        assert epochs_to_solve(read_events(str(tmp_path)), 20, 3) == summary.epochs_to_solve
        passes = [e.epoch for e in summary.events if e.event == EventKind.EVAL_PASS]
        assert passes == [20, 40, 60]
        assert len(read_metrics(str(tmp_path))) == 60

    def test_final_checkpoint_loads(self, tmp_path):
        summary = run_experiment(tiny(mode=Mode.WORST, max_epochs=20), str(tmp_path))
        assert summary.checkpoint == os.path.join(str(tmp_path), CHECKPOINT_FILE)
        net, lexicon = load_checkpoint(summary.checkpoint, expected_dims=[72, 16, 20])
        assert lexicon == summary.lexicon
        assert net.is_finite()


class TestDeterminism:

    def test_identical_runs(self, tmp_path):
        config = tiny()
        run_experiment(config, str(tmp_path / "a"))
        run_experiment(config, str(tmp_path / "b"))
        for name in (METRICS_FILE, EVENTS_FILE):
            assert read_bytes(str(tmp_path / "a"), name) == read_bytes(str(tmp_path / "b"), name)

    def test_rerun_into_same_directory_starts_over(self, tmp_path):
        config = tiny(mode=Mode.WORST)
        run_experiment(config, str(tmp_path / "once"))
        twice = str(tmp_path / "twice")
        run_experiment(config, twice)
        run_experiment(config, twice)
        for name in (METRICS_FILE, EVENTS_FILE):
            assert read_bytes(twice, name) == read_bytes(str(tmp_path / "once"), name)
        assert len(read_metrics(twice)) == 90

    def test_seeds_differ(self, tmp_path):
        run_experiment(tiny(seed=1), str(tmp_path / "a"))
        run_experiment(tiny(seed=2), str(tmp_path / "b"))
        assert read_bytes(str(tmp_path / "a"), METRICS_FILE) != read_bytes(str(tmp_path / "b"), METRICS_FILE)

    def test_resume_continues_to_identical_tail(self, tmp_path):
        config = tiny()
        straight = str(tmp_path / "straight")
        run_experiment(config, straight)

        paused = str(tmp_path / "paused")
        runner = ExperimentRunner(config, paused)
        runner.run(max_steps=45)
        pause = runner.save_checkpoint(os.path.join(paused, "pause.json"))
        # Rows written after the pause checkpoint must be discarded on resume.
        runner.run(max_steps=7)
        runner.close()

        resumed = ExperimentRunner.resume(pause)
        try:
            assert resumed.phase == Phase.WAKE
            assert resumed.epoch == 15
            resumed.run()
        finally:
            resumed.close()
        for name in (METRICS_FILE, EVENTS_FILE):
            assert read_bytes(paused, name) == read_bytes(straight, name)

    def test_resume_needs_training_state(self, tmp_path):
        path = str(tmp_path / "plain.json")
        save_checkpoint(init_network(0, layer_dims=[72, 20]), Lexicon(), path)
        with pytest.raises(CheckpointError):
            ExperimentRunner.resume(path)

    def test_resume_finished_run_adds_nothing(self, tmp_path):
        run_dir = str(tmp_path / "done")
        run_experiment(tiny(mode=Mode.WORST, max_epochs=20), run_dir)
        before = read_bytes(run_dir, METRICS_FILE)
        events = read_events(run_dir)
        shutil.copy(os.path.join(run_dir, CHECKPOINT_FILE), os.path.join(run_dir, "copy.json"))
        runner = ExperimentRunner.resume(os.path.join(run_dir, "copy.json"))
        try:
            assert runner.finished
            runner.run()
        finally:
            runner.close()
        assert read_bytes(run_dir, METRICS_FILE) == before
        assert read_events(run_dir) == events


def epochs_or_inf(summary):
    return summary.epochs_to_solve if summary.solved else float("inf")


@pytest.mark.slow
def test_abstractions_speed_up_learning_on_desk_catalog(tmp_path):
    """Preloaded abstractions solve fastest, invented ones beat primitives only."""
    config = ExperimentConfig(
        catalog="builtin_desk",
        hidden_layers=(64, 64),
        pretrain_epochs=2000,
        max_epochs=40000,
        wake_phase_len=1000,
        out=str(tmp_path)
    )
    epochs = {
        mode: [epochs_or_inf(s) for s in run_replicas(config.replace(mode=mode), 3)]
        for mode in (Mode.BEST, Mode.FULL, Mode.WORST)
    }
    medians = {mode: float(np.median(values)) for mode, values in epochs.items()}
    assert medians[Mode.BEST] < medians[Mode.FULL] < medians[Mode.WORST], epochs
    assert all(best < full for best, full in zip(epochs[Mode.BEST], epochs[Mode.FULL])), epochs
