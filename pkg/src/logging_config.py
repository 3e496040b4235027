"""Logging configuration for the scale-across explorer."""

import atexit
import logging
from logging import Handler
from pathlib import Path
from typing import List, Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
VALID_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _cleanup_logging() -> None:
    """Close and detach every root handler."""
    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        try:
            handler.close()
        except Exception:
            pass
        root_logger.removeHandler(handler)


def setup_logging(
    log_level: str = "INFO",
    log_dir: Optional[str] = ".sax",
    log_file: Optional[str] = "explorer.log",
) -> None:
    """Set up console and optional file logging.

    Args:
        log_level: The logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_dir: Directory for the log file; created if missing
        log_file: Log file name. If None (or log_dir is None), logs only to console

    Raises:
        ValueError: If the level is unknown
    """
    level = log_level.upper()
    if level not in VALID_LEVELS:
        raise ValueError(
            f"Invalid log level: {log_level}. Must be one of: {', '.join(VALID_LEVELS)}"
        )

    atexit.register(_cleanup_logging)
    _cleanup_logging()

    handlers: List[Handler] = [logging.StreamHandler()]
    if log_dir and log_file:
        log_path = Path(log_dir)
        log_path.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path / log_file, encoding="utf-8"))

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level))
    for handler in handlers:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root_logger.addHandler(handler)

    logging.getLogger("src").setLevel(getattr(logging, level))
