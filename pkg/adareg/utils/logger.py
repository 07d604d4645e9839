"""
Logger Module
Provides logging functionality.
"""

import logging
from logging.handlers import RotatingFileHandler
import os
from typing import Optional

from adareg.config.settings import get_settings


def setup_logger(name: str, level: Optional[str] = None) -> logging.Logger:
    """
    Sets up and returns a logger.

    Args:
        name (str): The name of the logger.
        level (str): Logging level. Defaults to ADAREG_LOG_LEVEL.

    Returns:
        logging.Logger: Configured logger.
    """
    settings = get_settings()
    level = (level or settings.LOG_LEVEL).upper()
    logger = logging.getLogger(f'adareg.{name}')
    logger.setLevel(getattr(logging, level, logging.INFO))
    logger.propagate = True

    if logger.handlers:
        return logger

    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, level, logging.INFO))
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if settings.LOG_FILE:
        log_dir = os.path.dirname(settings.LOG_FILE)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(
            settings.LOG_FILE,
            maxBytes=settings.LOG_MAX_BYTES,
            backupCount=settings.LOG_BACKUP_COUNT,
        )
        file_handler.setLevel(getattr(logging, level, logging.INFO))
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger
