"""
Experiment configuration: a dataclass of every tunable plus a flat
`key = value` file format with `#` comments.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Tuple

from Block_Architect.neural_net import HIDDEN_LAYERS, OptimizerKind
from Block_Architect.utility import DEFAULT_M_MAX, MAX_MESSAGES_PER_EPISODE, NUM_PRIMITIVES, Mode

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    """Raised for unknown keys, unparsable values and invalid settings."""
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    mode: Mode = Mode.FULL
    seed: int = 0
    m_max: int = DEFAULT_M_MAX
    hidden_layers: Tuple[int, ...] = HIDDEN_LAYERS
    pretrain_epochs: int = 20_000
    pretrain_min_blocks: int = 1
    pretrain_max_blocks: int = 3
    max_epochs: int = 400_000
    max_messages: int = MAX_MESSAGES_PER_EPISODE
    wake_phase_len: int = 2_000
    score_threshold: float = 4.0
    min_len: int = 2
    max_len: int = 6
    window: int = 2_000
    min_frequency: int = 2
    once_per_episode: bool = True
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.99995
    epsilon_min: float = 0.05
    epsilon_boost: float = 0.3
    optimizer: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float = 1e-4
    gamma: float = 1.0
    replay_capacity: int = 100_000
    batch_size: int = 64
    target_sync: int = 500
    dream_iterations: int = 2_000
    eval_interval: int = 500
    eval_consecutive: int = 3
    catalog: str = "builtin"
    preload: str = ""
    checkpoint_interval: int = 0
    out: str = "runs"

    def replace(self, **changes: Any) -> 'ExperimentConfig':
        """Copy with `changes` applied and validated; None values are ignored."""
        changes = {key: value for key, value in changes.items() if value is not None}
        config = dataclasses.replace(self, **changes)
        validate(config)
        return config

    def preload_bodies(self) -> List[str]:
        """The `;`-separated preload entries, each a comma list of message labels."""
        return [entry.strip() for entry in self.preload.split(";") if entry.strip()]

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_layers(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


_PARSERS: Dict[type, Callable[[str], Any]] = {
    int: int,
    float: float,
    bool: _parse_bool,
    str: str,
    Mode: Mode,
    OptimizerKind: OptimizerKind,
    Tuple[int, ...]: _parse_layers
}
_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(key: str, text: str) -> Any:
    """
    Convert the text of one config value to the field's type.

    Raises:
        ConfigError: If the key is unknown or the value does not parse
    """
    if key not in _FIELD_TYPES:
        raise ConfigError(f"Unknown config key: {key!r}")
    try:
        return _PARSERS[_FIELD_TYPES[key]](text)
    except ValueError as e:
        raise ConfigError(f"Invalid value for {key}: {text!r}") from e


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """
    Parse `key = value` lines on top of the defaults.

    Raises:
        ConfigError: On unknown or repeated keys, malformed lines or invalid values
    """
    values: Dict[str, Any] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{line_no}: duplicate key {key!r}")
        try:
            values[key] = parse_value(key, value)
        except ConfigError as e:
            raise ConfigError(f"{source}:{line_no}: {e}") from e
    config = ExperimentConfig(**values)
    validate(config)
    return config


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read(), path)


def format_config(config: ExperimentConfig) -> str:
    return "".join(f"{key} = {format_value(value)}\n" for key, value in config.to_dict().items())


def write_config(config: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_config(config))


def validate(config: ExperimentConfig) -> None:
    """
    Check value ranges and cross-field constraints.

    Raises:
        ConfigError: Naming the first offending key
    """
    positive = (
        "max_epochs", "max_messages", "wake_phase_len", "window", "min_frequency",
        "replay_capacity", "batch_size", "target_sync", "eval_interval", "eval_consecutive"
    )
    for key in positive:
        if getattr(config, key) < 1:
            raise ConfigError(f"{key} must be positive")
    non_negative = ("pretrain_epochs", "dream_iterations", "checkpoint_interval", "score_threshold")
    for key in non_negative:
        if getattr(config, key) < 0:
            raise ConfigError(f"{key} must not be negative")
    if config.m_max < NUM_PRIMITIVES:
        raise ConfigError(f"m_max must be at least {NUM_PRIMITIVES}")
    if not config.hidden_layers or min(config.hidden_layers) < 1:
        raise ConfigError("hidden_layers needs at least one positive width")
    if not 1 <= config.pretrain_min_blocks <= config.pretrain_max_blocks <= 4:
        raise ConfigError("Require 1 <= pretrain_min_blocks <= pretrain_max_blocks <= 4")
    if not 2 <= config.min_len <= config.max_len:
        raise ConfigError("Require 2 <= min_len <= max_len")
    for key in ("epsilon_start", "epsilon_min", "epsilon_boost", "gamma"):
        if not 0.0 <= getattr(config, key) <= 1.0:
            raise ConfigError(f"{key} must lie in [0, 1]")
    if not 0.0 < config.epsilon_decay <= 1.0:
        raise ConfigError("epsilon_decay must lie in (0, 1]")
    if config.learning_rate <= 0:
        raise ConfigError("learning_rate must be positive")
    if config.mode != Mode.BEST and config.preload_bodies():
        raise ConfigError("preload is only used in mode=best")
