"""Console plus JSON-lines logging for the vla_services package."""
import logging
from pathlib import Path
from typing import Optional

from pythonjsonlogger.json import JsonFormatter

ROOT_LOGGER = "vla_services"
CONSOLE_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
EVENTS_FILE = "events.jsonl"


def configure_logging(run_dir: Optional[Path] = None,
                      level: int = logging.INFO) -> logging.Logger:
    """
    Install the console handler and, with a run directory, a structured
    handler writing one JSON object per record to ``events.jsonl``.

    Calling it again replaces the handlers, so each command can point the
    event log at its own run directory.
    """
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(level)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter(CONSOLE_FORMAT))
    logger.addHandler(console)

    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        events = logging.FileHandler(run_dir / EVENTS_FILE, encoding="utf-8")
        events.setFormatter(JsonFormatter(
            "%(asctime)s %(levelname)s %(name)s %(message)s"
        ))
        logger.addHandler(events)
    logger.propagate = False
    return logger
