import os
import re
import unicodedata
import jinja2
from datetime import timedelta
from typing import Sequence
try:
    from enum import StrEnum, IntEnum
except ImportError:
    # < Python 3.11
    # This should be removed when the support for Python 3.10 ends.
    from enum import Enum
    class StrEnum(str, Enum):
        def __str__(self) -> str:
            return self.value

    class IntEnum(int, Enum):
        pass

GRID_SIZE = 6
NUM_PRIMITIVES = 2 * GRID_SIZE
DEFAULT_M_MAX = 20
MAX_MESSAGES_PER_EPISODE = 10
PARTIAL_MATCH_WEIGHT = 0.1
COMPLETION_BONUS = 1.0
TIME_DISCOUNT = 0.9
SPARK_LEVELS = "▁▂▃▄▅▆▇█"


class Orientation(StrEnum):
    VERTICAL = "V"
    HORIZONTAL = "H"


class Mode(StrEnum):
    WORST = "worst"
    BEST = "best"
    FULL = "full"


class Phase(StrEnum):
    PRETRAIN = "pretrain"
    WAKE = "wake"


class EventKind(StrEnum):
    PROMOTION = "promotion"
    DREAM_START = "dream_start"
    DREAM_END = "dream_end"
    EVAL_PASS = "eval_pass"
    SOLVE = "solve"


class ExitCode(IntEnum):
    OK = 0
    CONFIG = 1
    IO = 2


def convert_time_unit(time_second: int) -> str:
    """Converts a time duration in seconds to a human-readable string.

    Args:
        time_second: The time duration in seconds.

    Returns:
        str: A human-readable string representing the time duration.
    """
    time = str(timedelta(seconds=int(time_second)))
    if "day" not in time:
        if time_second < 1:
            time = "less than a second"
        elif time_second < 60:
            time = f"{int(time_second)} seconds"
        elif time_second < 3600:
            time = time[2:] + " minutes"
        else:
            time += " hours"
    return time


def slugify(value: str) -> str:
    """
    Convert text to ASCII-only slugs usable as run directory names.

    Args:
        value (str): The string to convert to a slug.

    Returns:
        str: The slugified string with only alphanumerics, underscores, or hyphens.
    """
    value = unicodedata.normalize('NFKD', str(value)).encode('ascii', 'ignore').decode('ascii')
    value = re.sub(r'[^\w\s-]', '', value.lower())
    return re.sub(r'[-\s]+', '-', value).strip('-_')


def sparkline(rates: Sequence[float]) -> str:
    """Render success rates in [0, 1] as a block-character sparkline."""
    top = len(SPARK_LEVELS) - 1
    return "".join(SPARK_LEVELS[min(top, max(0, round(rate * top)))] for rate in rates)


def setup_template(template: str = "report.txt") -> jinja2.Template:
    """
    Sets up the Jinja2 environment over the package directory and loads a template.

    Args:
        template (str): Template file name, or a path to a custom template.

    Returns:
        jinja2.Template: The configured Jinja2 template object.
    """
    if os.path.isfile(template):
        template_dir = os.path.dirname(os.path.abspath(template))
        template_file = os.path.basename(template)
    else:
        template_dir = os.path.dirname(__file__)
        template_file = template
    template_loader = jinja2.FileSystemLoader(searchpath=template_dir)
    template_env = jinja2.Environment(
        loader=template_loader,
        autoescape=False,
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True
    )
    return template_env.get_template(template_file)
