"""Shared logging utilities."""

import logging
import os
import time

LOG_LEVEL_ENV = "SNE_LOG_LEVEL"
DEFAULT_LOG_LEVEL = "INFO"


class UTCFormatter(logging.Formatter):
    """Formatter stamping records in UTC with microsecond resolution."""

    def formatTime(self, record: logging.LogRecord, datefmt: str | None = None) -> str:
        dt = time.gmtime(record.created)
        microseconds = int((record.created % 1) * 1_000_000)
        return time.strftime("%Y-%m-%dT%H:%M:%S", dt) + f".{microseconds:06d}Z"


def resolve_log_level() -> int:
    """Read the log level from the environment, falling back to INFO."""
    name = os.getenv(LOG_LEVEL_ENV, DEFAULT_LOG_LEVEL).upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def make_handler() -> logging.Handler:
    """Create a stderr handler using the UTC formatter."""
    handler = logging.StreamHandler()
    handler.setFormatter(
        UTCFormatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    )
    return handler


def setup_logger(name: str) -> logging.Logger:
    """
    Set up a named logger.

    Calling this twice for the same name returns the same logger without
    stacking a second handler.

    Returns:
        logging.Logger: Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(resolve_log_level())

    if not logger.handlers:
        logger.addHandler(make_handler())
        # Module loggers own their handler; the root handler set up by the
        # CLI must not print the same record twice.
        logger.propagate = False

    return logger
