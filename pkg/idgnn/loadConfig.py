import configparser
import os
from pathlib import Path
from typing import Dict, Optional

from dotenv import load_dotenv

# repository root config.ini, unless IDGNN_CONFIG points elsewhere
DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config.ini"


def read_config(path: Optional[str] = None) -> Dict[str, Dict[str, str]]:
    """INI file as {section: {key: value}}; keys keep their case (e.g. invariance_K)."""
    load_dotenv()
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read(path or os.getenv("IDGNN_CONFIG") or str(DEFAULT_CONFIG_PATH))
    return {section: dict(parser.items(section)) for section in parser.sections()}


def env_seed() -> Optional[int]:
    """IDGNN_SEED from the environment (or a .env file), if set."""
    load_dotenv()
    raw = os.getenv("IDGNN_SEED")
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"IDGNN_SEED must be an integer, got {raw!r}") from None
