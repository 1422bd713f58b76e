import os
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from fdialab.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

# Get configuration directory from environment variable, or use default if not set
CONFIG_DIR = os.environ.get('FDIALAB_CONFIG_DIR', None)

DEFAULT_SCENARIO_FILE = "scenario.json"


def config_path(filename: str) -> Path:
    if CONFIG_DIR:
        return Path(CONFIG_DIR) / filename
    return Path(__file__).parent / "config" / filename


def load_json_config(filename: str = DEFAULT_SCENARIO_FILE, path: Optional[str] = None) -> Dict[str, Any]:
    """
    读取扁平 JSON 配置

    path 优先；否则在 FDIALAB_CONFIG_DIR（或包内 config/）下查找 filename。
    文件缺失或格式错误时抛出 ConfigurationError。
    """
    resolved = Path(path) if path else config_path(filename)
    logger.info(f"Loading configuration from {resolved}")

    if not resolved.exists():
        raise ConfigurationError(f"Configuration file {resolved} does not exist", details={"path": str(resolved)})

    try:
        with open(resolved, 'r', encoding='utf-8') as f:
            config = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Error loading configuration file {resolved}: {str(e)}")
        raise ConfigurationError(f"Cannot parse configuration file {resolved}: {e}", details={"path": str(resolved)})

    if not isinstance(config, dict):
        raise ConfigurationError("Scenario file must contain a flat JSON object", details={"path": str(resolved)})
    nested = [key for key, value in config.items() if isinstance(value, dict)]
    if nested:
        raise ConfigurationError("Scenario file must be flat", details={"path": str(resolved), "nested": ",".join(nested)})
    return config
