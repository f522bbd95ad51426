import logging

PACKAGE_LOGGER = "tsprop"
LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def get_logger(name: str) -> logging.Logger:
    """Module logger that stays silent until the caller configures logging."""
    logger = logging.getLogger(name)
    if not any(isinstance(h, logging.NullHandler) for h in logger.handlers):
        logger.addHandler(logging.NullHandler())
    return logger


def enable_verbose_logging(level: int = logging.INFO) -> logging.Logger:
    """
    Attach a stderr StreamHandler to the package logger.

    Idempotent: a second call only adjusts the level. propagate=False keeps
    records inside our handler so root-logger handlers installed by the host
    application do not print duplicates.

    Args:
        level: Logging level for the package logger (default INFO).

    Returns:
        The configured package logger.
    """
    pkg_logger = logging.getLogger(PACKAGE_LOGGER)
    has_stream = any(
        isinstance(h, logging.StreamHandler) and not isinstance(h, logging.NullHandler)
        for h in pkg_logger.handlers
    )
    if not has_stream:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        pkg_logger.addHandler(handler)
    pkg_logger.setLevel(level)
    pkg_logger.propagate = False
    return pkg_logger
