import os
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from dotenv import load_dotenv
import dpath
from pydantic import BaseModel, model_validator

load_dotenv()

DEFAULT_CONFIG_PATH = str(Path(__file__).resolve().parent.parent / "config.yml")


def _config_path(config_path: Optional[str]) -> str:
    if config_path is not None:
        return config_path
    return os.getenv("OCRS_CONFIG", DEFAULT_CONFIG_PATH)


def get_config(dot_path_key: str, config_path: Optional[str] = None) -> Any:
    """
    Load a field from the YAML config file using dot notation path.

    Args:
        dot_path_key: The key path to look up in the config (e.g. 'tolerances.slackness')
        config_path: Path to the YAML config file, defaults to the packaged config.yml
            (or $OCRS_CONFIG when set)

    Returns:
        The value for the requested key path

    Raises:
        FileNotFoundError: If config file doesn't exist
        KeyError: If key path not found in config
    """
    abs_config_path = os.path.abspath(_config_path(config_path))

    if not os.path.exists(abs_config_path):
        raise FileNotFoundError(f"Config file not found at {abs_config_path}")

    with open(abs_config_path) as f:
        config = yaml.safe_load(f)

    try:
        return dpath.get(config, dot_path_key, separator=".")
    except KeyError:
        raise KeyError(f"Key path '{dot_path_key}' not found in config")


def thread_count() -> int:
    """Parallelism cap from OCRS_THREADS (default 1)."""
    raw = os.getenv("OCRS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"OCRS_THREADS must be an integer, got {raw!r}")


class ExperimentConfig(BaseModel):
    """Parameters of one CLI experiment."""

    command: str
    instance_path: Optional[str] = None
    generator: Optional[str] = None
    params: dict[str, Any] = {}
    tol: float = 1e-9
    seed: int = 7
    output_format: Literal["json", "csv"] = "json"
    output_path: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self) -> "ExperimentConfig":
        if (self.instance_path is None) == (self.generator is None):
            raise ValueError("exactly one of instance_path or generator must be given")
        return self


def setting(dot_path_key: str, default: Any) -> Any:
    """get_config with a fallback, for module-level defaults."""
    try:
        return get_config(dot_path_key)
    except (FileNotFoundError, KeyError):
        return default
