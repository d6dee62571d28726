"""Logging module for the C-MARL lab."""

import logging
import os
from typing import Optional

PACKAGE_LOGGER = "cmarl"


def setup_logger(name: str = PACKAGE_LOGGER, log_file: Optional[str] = 'cmarl.log', verbosity: int = 2) -> logging.Logger:
    """Set up and configure logger.

    Args:
        name: Logger name; module loggers under ``cmarl.`` propagate to it
        log_file: Log file path, or None for console only
        verbosity: Verbosity level (0=ERROR, 1=WARNING, 2=INFO, 3=DEBUG)

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)

    # Avoid adding handlers multiple times
    if logger.handlers:
        return logger

    level_map = {
        0: logging.ERROR,
        1: logging.WARNING,
        2: logging.INFO,
        3: logging.DEBUG
    }

    # Cap at DEBUG for values > 3
    if verbosity >= 3:
        log_level = logging.DEBUG
    else:
        log_level = level_map.get(verbosity, logging.ERROR)
    logger.setLevel(log_level)

    formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(message)s')

    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    return logger


def get_logger(name: str) -> logging.Logger:
    """Module logger; silent until ``setup_logger`` configures the package logger."""
    return logging.getLogger(name)


def reset_logger(name: str = PACKAGE_LOGGER) -> None:
    """Close and drop every handler of ``name`` so it can be reconfigured."""
    logger = logging.getLogger(name)
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)
