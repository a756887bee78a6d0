import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Union

from utils.config_loader import load_config

__all__ = ["setup_logger", "close_logger"]

_SETTINGS_CACHE: Optional[Dict[str, Any]] = None
_FORMAT = "[%(asctime)s] [%(levelname)s] [%(name)s] %(message)s"


def _load_settings(config_path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """Load application settings once and cache the result."""
    global _SETTINGS_CACHE
    if config_path is not None:
        return load_config(config_path)
    if _SETTINGS_CACHE is None:
        _SETTINGS_CACHE = load_config(Path(__file__).resolve().parents[1] / "config.yml")
    return _SETTINGS_CACHE


def _get_log_level(level: Optional[Union[int, str]]) -> int:
    if isinstance(level, int):
        return level
    if isinstance(level, str):
        return getattr(logging, level.upper(), logging.INFO)
    return logging.INFO


def setup_logger(
    name: str,
    *,
    config_path: Optional[Union[str, Path]] = None,
    log_dir: Optional[Union[str, Path]] = None,
    level: Optional[Union[int, str]] = None,
) -> logging.Logger:
    """
    Configure and return a logger that writes to the console and a daily log file.

    Args:
        name: Logger name.
        config_path: Optional settings file; defaults to the repository config.yml.
        log_dir: Directory for log files. Defaults to settings paths.log_dir.
        level: Desired log level; falls back to settings logging.level or INFO.
    """
    settings = _load_settings(config_path)
    target_dir = Path(log_dir or settings["paths"]["log_dir"])
    target_dir.mkdir(parents=True, exist_ok=True)

    resolved_level = _get_log_level(level or settings.get("logging", {}).get("level", "INFO"))

    logger = logging.getLogger(name)
    logger.setLevel(resolved_level)
    if logger.handlers:
        return logger

    formatter = logging.Formatter(_FORMAT)
    file_handler = logging.FileHandler(target_dir / f"{datetime.now():%Y%m%d}.log", encoding="utf-8")
    console_handler = logging.StreamHandler()
    for handler in (file_handler, console_handler):
        handler.setLevel(resolved_level)
        handler.setFormatter(formatter)
        logger.addHandler(handler)

    return logger


def close_logger(logger: logging.Logger) -> None:
    """Detach and close all handlers (tests use this to release temp directories)."""
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)
