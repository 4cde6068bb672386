import logging

from rich.logging import RichHandler

import app_config


def setup_logging(level: str | None = None, verbose: bool = False) -> None:
    """Install a rich console handler on the root logger.

    The level comes from app_config (logging.level) unless given; verbose forces DEBUG.
    Loggers named in logging.quiet stay at WARNING unless verbose.
    """
    configured = app_config.is_initialized()
    if verbose:
        level = "DEBUG"
    elif level is None:
        level = app_config.get_str(app_config.ConfigKeys.LOG_LEVEL, "INFO") if configured else "INFO"
    tracebacks = app_config.get_bool(app_config.ConfigKeys.LOG_RICH_TRACEBACKS, True) if configured else True

    logging.basicConfig(
        level=level.upper(),
        format="%(name)s: %(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=tracebacks, show_path=False)],
        force=True,
    )
    if configured:
        for name in app_config.get_list(app_config.ConfigKeys.LOG_QUIET):
            logging.getLogger(name).setLevel(logging.NOTSET if verbose else logging.WARNING)
