import pytest

from Block_Architect.config import (
    ConfigError, ExperimentConfig, format_config, load_config, parse_config, parse_value, write_config
)
from Block_Architect.neural_net import OptimizerKind
from Block_Architect.utility import Mode

SAMPLE = """
# desk-scale run
mode = best            # preloaded abstractions
seed = 7
hidden_layers = 64, 32
epsilon_decay = 0.999
once_per_episode = no
preload = V1,V2,H1; H3,V3,H3
"""


def test_defaults():
    config = ExperimentConfig()
    assert config.mode == Mode.FULL
    assert config.m_max == 20
    assert config.hidden_layers == (576, 576, 576, 36)
    assert config.max_messages == 10
    assert config.epsilon_decay == 0.99995
    assert config.optimizer == OptimizerKind.ADAM
    assert config.gamma == 1.0


def test_parse_sample():
    config = parse_config(SAMPLE)
    assert config.mode == Mode.BEST
    assert config.seed == 7
    assert config.hidden_layers == (64, 32)
    assert config.epsilon_decay == 0.999
    assert config.once_per_episode is False
    assert config.preload_bodies() == ["V1,V2,H1", "H3,V3,H3"]
    assert config.batch_size == 64


def test_file_round_trip(tmp_path):
    config = parse_config(SAMPLE).replace(learning_rate=3e-4, score_threshold=2.5, catalog="builtin_desk")
    path = tmp_path / "config.txt"
    write_config(config, str(path))
    assert load_config(str(path)) == config
    assert format_config(config).splitlines()[0] == "mode = best"


def test_unknown_key():
    with pytest.raises(ConfigError, match="learning_speed"):
        parse_config("learning_speed = 0.1")


def test_duplicate_key_names_the_line():
    with pytest.raises(ConfigError, match=r"<string>:2: duplicate key 'seed'"):
        parse_config("seed = 1\nseed = 2")


def test_invalid_values():
    with pytest.raises(ConfigError, match="seed"):
        parse_config("seed = lots")
    with pytest.raises(ConfigError):
        parse_config("mode = average")
    with pytest.raises(ConfigError):
        parse_config("once_per_episode = maybe")
    with pytest.raises(ConfigError):
        parse_value("optimizer", "rmsprop")


def test_malformed_line(tmp_path):
    path = tmp_path / "broken.txt"
    path.write_text("seed = 1\nmode best\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="broken.txt:2"):
        load_config(str(path))


@pytest.mark.parametrize("text", [
    "m_max = 11",
    "batch_size = 0",
    "pretrain_min_blocks = 3\npretrain_max_blocks = 2",
    "pretrain_max_blocks = 5",
    "min_len = 1",
    "min_len = 4\nmax_len = 3",
    "epsilon_min = 1.5",
    "epsilon_decay = 0",
    "learning_rate = 0",
    "hidden_layers = 64,0",
    "dream_iterations = -1",
    "preload = V1,V2",
])
def test_validation(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_replace_ignores_none():
    config = ExperimentConfig().replace(seed=None, mode=Mode.WORST, max_epochs=None)
    assert config.seed == 0
    assert config.mode == Mode.WORST
    assert config.max_epochs == 400_000
    with pytest.raises(ConfigError):
        ExperimentConfig().replace(window=0)
