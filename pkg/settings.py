"""
Runtime settings for the CMI estimation toolkit.

- Loads `.env` once (python-dotenv) for environment defaults
- Reads KEY=VALUE run-config files
- Configures logging the same way for every entry script
"""
import os
import logging
from pathlib import Path

from dotenv import load_dotenv, dotenv_values

from errors import ConfigError

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent

DEFAULT_OUT_DIR = Path(os.getenv("CMI_OUT_DIR", "results"))
DEFAULT_LOG_LEVEL = os.getenv("CMI_LOG_LEVEL", "INFO")
DEFAULT_THREADS = int(os.getenv("CMI_THREADS", "1"))

CONFIG_VERSION = 1

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def configure_logging(level=None):
    logging.basicConfig(
        level=getattr(logging, str(level or DEFAULT_LOG_LEVEL).upper(), logging.INFO),
        format=LOG_FORMAT
    )


def load_config_file(path) -> dict:
    """
    Read a dotenv-style run config. Keys are normalised to lower case so
    they line up with argparse destinations (TAU=1e-3 -> tau).
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")

    raw = dotenv_values(path)
    values = {k.strip().lower(): v for k, v in raw.items() if v is not None and v != ""}

    version = values.pop("config_version", str(CONFIG_VERSION))
    if int(version) != CONFIG_VERSION:
        raise ConfigError(f"Unsupported CONFIG_VERSION={version} (expected {CONFIG_VERSION})")
    return values
