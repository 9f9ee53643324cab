import logging
import os
import sys
from pathlib import Path
from typing import Optional

from pythonjsonlogger import jsonlogger

ROOT_LOGGER_NAME = "chatvla"


def setup_logger(name: Optional[str] = None):
    """Configure and return a logger instance."""
    root = logging.getLogger(ROOT_LOGGER_NAME)

    if not root.handlers:  # Avoid adding handlers multiple times
        root.setLevel(logging.INFO)

        # Create formatters and handlers
        formatter = logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        )

        # Console handler
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(formatter)
        root.addHandler(console_handler)

        # File handler
        log_dir = Path(os.environ.get("CHATVLA_LOG_DIR", "logs"))
        log_dir.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_dir / "chatvla.log")
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    if name:
        return root.getChild(name)
    return root


def setup_json_log(path, name: str = "trainlog"):
    """
    Create a dedicated logger writing one JSON object per record.

    Used for the training log and the line-delimited report records; the
    logger does not propagate to the console handlers.

    Args:
        path: Output file (created with its parent directory)
        name: Child logger name, unique per open file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    logger = logging.getLogger(f"{ROOT_LOGGER_NAME}.json.{name}")
    logger.setLevel(logging.INFO)
    logger.propagate = False
    close_json_log(logger)

    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(jsonlogger.JsonFormatter("%(message)s"))
    logger.addHandler(handler)
    return logger


def close_json_log(logger: logging.Logger):
    """Flush and detach every handler of a JSON log."""
    for handler in list(logger.handlers):
        handler.flush()
        handler.close()
        logger.removeHandler(handler)
