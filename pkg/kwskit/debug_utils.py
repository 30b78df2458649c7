"""
Logging helpers shared by the CLI and services
"""

import logging
import sys
import traceback

from kwskit.kws_config import DEBUG_MODE, LOG_LEVEL

logger = logging.getLogger("kwskit")

_LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level=None, quiet=False):
    """
    Configure root logging for a command-line run

    Args:
        level (str, optional): Level name; defaults to KWS_LOG_LEVEL
        quiet (bool): Only warnings and errors
    """
    if quiet:
        level = "WARNING"
    elif level is None:
        level = "DEBUG" if DEBUG_MODE else LOG_LEVEL
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO),
                        format=_LOG_FORMAT, stream=sys.stderr, force=True)


def debug_log(message, level="DEBUG"):
    """
    Log a diagnostic message

    DEBUG-level messages are promoted to INFO when DEBUG_MODE is on so they
    show up under the default log level.
    """
    level = level.upper()
    if level == "DEBUG" and DEBUG_MODE:
        level = "INFO"
    logger.log(getattr(logging, level, logging.DEBUG), message)


def log_exception(e, context=""):
    """
    Log an exception with its traceback

    Args:
        e (BaseException): The exception
        context (str): What was being done when it happened
    """
    prefix = f"{context}: " if context else ""
    logger.error(f"{prefix}{type(e).__name__}: {e}")
    if DEBUG_MODE:
        logger.error("".join(traceback.format_exception(type(e), e, e.__traceback__)))
