# process_painter/logger.py

import logging
import sys

# Import the centralized path for the optional log file
from . import LOG_FILE


def setup_logging(level=logging.INFO, log_file=LOG_FILE):
    """
    Configures the root logger for the toolkit.

    Log messages go to two places:
    1. The console (standard error), so stdout stays free for command output.
    2. An optional file handler when a log file path is configured.
    """
    logger = logging.getLogger()
    logger.setLevel(level)

    formatter = logging.Formatter("%(asctime)s - %(levelname)s - %(message)s", datefmt="%Y-%m-%d %H:%M:%S")

    # Check if handlers are already present to avoid duplication on re-imports
    if not logger.handlers:
        # --- Console Handler ---
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

    # --- File Handler ---
    if log_file and not any(isinstance(h, logging.FileHandler) for h in logger.handlers):
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def set_level(level):
    """Adjusts the root logger level (used by --verbose / --quiet)."""
    logging.getLogger().setLevel(level)


# Create and configure the logger instance when this module is first imported
log = setup_logging()
