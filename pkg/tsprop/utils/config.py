import json

from pydantic import ValidationError

from tsprop.exceptions import InputError
from tsprop.sim.environment import EnvConfig
from tsprop.utils.logger import get_logger

logger = get_logger(__name__)


def load_env_config(path: str) -> EnvConfig:
    """
    Read an EnvConfig JSON file. Missing keys take their defaults.

    Raises:
        InputError: unreadable file, malformed JSON or invalid fields.
    """
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except OSError as e:
        raise InputError(f"Cannot read config '{path}': {e}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"Malformed JSON in config '{path}': {e}") from e
    try:
        cfg = EnvConfig.model_validate(raw)
    except ValidationError as e:
        raise InputError(f"Invalid config '{path}': {e}") from e
    logger.debug("Loaded config %s (hash %s)", path, cfg.config_hash()[:12])
    return cfg
