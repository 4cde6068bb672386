"""
Application settings with type-safe enum keys and a YAML backend.

Usage:
    # In an entrypoint (initialize once)
    import app_config
    app_config.init_config("app_config.yaml")

    # In lib files (use anywhere)
    from app_config import ConfigKeys, get_str, get_int
    root = get_str(ConfigKeys.UID_ROOT)
    max_pdu = get_int(ConfigKeys.NET_MAX_PDU, 16384)

Domain configuration (routing rules, gateway sections, MAP graphs, scenarios)
lives in the section grammar files under configs/, not here.
"""

from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

import yaml


class ConfigKeys(Enum):
    """Type-safe configuration keys enum."""
    DIR_WORK = "directories.work"
    DIR_AUDIT = "directories.audit"
    DIR_QUARANTINE = "directories.quarantine"
    DIR_DEAD_LETTER = "directories.dead_letter"
    DIR_SINKS = "directories.sinks"
    NET_MAX_PDU = "network.max_pdu"
    NET_IDLE_TIMEOUT_S = "network.idle_timeout_s"
    NET_CONNECT_TIMEOUT_S = "network.connect_timeout_s"
    UID_ROOT = "identity.uid_root"
    LOG_LEVEL = "logging.level"
    LOG_RICH_TRACEBACKS = "logging.rich_tracebacks"
    LOG_QUIET = "logging.quiet"
    GATEWAY_CONFIG = "gateway.config"
    GATEWAY_ADMIN_PORT = "gateway.admin_port"


DEFAULT_CONFIG_PATH = Path(__file__).with_name("app_config.yaml")

# Global config instance and file path
_config: Optional[dict] = None
_config_path: Optional[str] = None


def init_config(config_path: Union[str, Path] = DEFAULT_CONFIG_PATH) -> Any:
    """
    Initialize the configuration from a YAML file.

    Args:
        config_path: Path to the YAML configuration file

    Returns:
        The loaded configuration object

    Raises:
        FileNotFoundError: If the config file doesn't exist
        yaml.YAMLError: If the YAML file is malformed
    """
    global _config, _config_path
    if _config is None:
        with open(config_path, "r") as f:
            _config = yaml.safe_load(f) or {}
        _config_path = str(config_path)
    return _config


def reload_config() -> Any:
    """Re-read the file init_config loaded."""
    global _config
    _ensure_initialized()
    _config = None
    return init_config(_config_path)


def is_initialized() -> bool:
    return _config is not None


def _ensure_initialized() -> None:
    """Ensure config is initialized before use."""
    if _config is None:
        raise RuntimeError(
            "Config not initialized. Call init_config() first from your main application."
        )


def _key_str(key: Union[ConfigKeys, str]) -> str:
    return key.value if isinstance(key, ConfigKeys) else key


def _get(key: Union[ConfigKeys, str], default: Any = None) -> Any:
    """
    Private base getter with error handling.

    Args:
        key: Configuration key (enum or string), nested with dot notation
        default: Default value if key not found

    Returns:
        Configuration value or default

    Raises:
        KeyError: If key is missing and no default provided
    """
    _ensure_initialized()
    key_str = _key_str(key)

    value: Any = _config
    try:
        for k in key_str.split("."):
            if value is None:
                break
            value = value[k]
    except (KeyError, TypeError):
        value = None

    if value is None:
        if default is None:
            available_keys = list(_config.keys())[:10] if isinstance(_config, dict) else []

            error_msg = f"Configuration key '{key_str}' not found in config file."
            if available_keys:
                error_msg += f"\nAvailable top-level keys: {', '.join(available_keys)}"
            if isinstance(key, ConfigKeys):
                error_msg += f"\nEnum used: {key.name}"

            raise KeyError(error_msg)

        return default

    return value


def get_str(key: Union[ConfigKeys, str], default: str = "") -> str:
    """Get a string configuration value."""
    return str(_get(key, default))


def get_int(key: Union[ConfigKeys, str], default: int = 0) -> int:
    """Get an integer configuration value."""
    value = _get(key, default)
    try:
        return int(value)
    except (ValueError, TypeError) as e:
        raise ValueError(
            f"Configuration key '{_key_str(key)}' has value '{value}' which cannot be converted to int: {e}"
        )


def get_float(key: Union[ConfigKeys, str], default: float = 0.0) -> float:
    """Get a float configuration value."""
    value = _get(key, default)
    try:
        return float(value)
    except (ValueError, TypeError) as e:
        raise ValueError(
            f"Configuration key '{_key_str(key)}' has value '{value}' which cannot be converted to float: {e}"
        )


def get_bool(key: Union[ConfigKeys, str], default: bool = False) -> bool:
    """Get a boolean configuration value."""
    value = _get(key, default)
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        return value.lower() in ("true", "1", "yes", "on", "enabled")
    return bool(value)


def get_path(key: Union[ConfigKeys, str], default: str = "") -> Path:
    """Get a filesystem path, resolved relative to the config file's directory."""
    raw = Path(get_str(key, default))
    if raw.is_absolute() or _config_path is None:
        return raw
    return Path(_config_path).parent / raw


def get_list(key: Union[ConfigKeys, str], default: Optional[list] = None) -> list:
    """Get a list value; a scalar becomes a one-element list, a string is split on commas."""
    value = _get(key, default if default is not None else [])
    if isinstance(value, list):
        return value
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return [value]
