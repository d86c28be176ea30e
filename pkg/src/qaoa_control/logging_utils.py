"""
Logging setup for qaoa-control
"""

import logging
from typing import Optional

from .config import LOGGING_CONFIG

_configured = False


def configure_logging(level: Optional[str] = None) -> None:
    """
    Configure the root logger once from LOGGING_CONFIG

    Args:
        level: Optional level name overriding LOGGING_CONFIG / QAOA_CONTROL_LOG_LEVEL
    """
    global _configured
    level_name = (level or LOGGING_CONFIG["level"]).upper()
    if _configured:
        logging.getLogger().setLevel(level_name)
        return

    handlers = [logging.StreamHandler()]
    if LOGGING_CONFIG["log_to_file"]:
        handlers.append(logging.FileHandler(LOGGING_CONFIG["log_file"]))
    logging.basicConfig(level=level_name, format=LOGGING_CONFIG["format"], handlers=handlers)

    # Quiet chatty third-party loggers
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    _configured = True
