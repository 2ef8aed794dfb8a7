"""Logging for command-line runs, the acceptance harness and the explorer.

Log records go to stderr by default: ``extract`` and ``params --json``
print data on stdout and must stay pipeable.
"""

import logging
import sys
from typing import Optional, TextIO

FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

QUIET_LOGGERS = ("matplotlib", "streamlit", "watchdog", "PIL")


class _ShortNameFilter(logging.Filter):
    """Drop the ``src.`` package prefix from logger names."""

    def filter(self, record: logging.LogRecord) -> bool:
        if record.name.startswith("src."):
            record.name = record.name[4:]
        return True


def setup_logging(
    level: str = "INFO",
    log_file: Optional[str] = None,
    stream: Optional[TextIO] = None,
) -> None:
    """
    Configure the root logger.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Optional file that receives the same records
        stream: Console stream (stderr by default)
    """
    log_level = getattr(logging, level.upper(), logging.INFO)
    formatter = logging.Formatter(fmt=FORMAT, datefmt=DATE_FORMAT)
    short_names = _ShortNameFilter()

    handlers = [logging.StreamHandler(stream or sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    root_logger.handlers.clear()
    for handler in handlers:
        handler.setLevel(log_level)
        handler.setFormatter(formatter)
        handler.addFilter(short_names)
        root_logger.addHandler(handler)

    # numpy/scipy RuntimeWarnings end up in the same place as everything else
    logging.captureWarnings(True)
    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)


def get_logger(name: str) -> logging.Logger:
    """Module logger; call as ``get_logger(__name__)``."""
    return logging.getLogger(name)
