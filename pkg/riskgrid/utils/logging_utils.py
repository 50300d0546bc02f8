"""Logging setup shared by the CLI and the services"""

import logging
import os

LOG_FORMAT = '%(levelname)s: %(message)s'


def setup_logging(level=None, verbose=False):
    """Configure the root riskgrid logger with INFO:/WARNING:/ERROR: prefixes"""
    if verbose:
        level = 'DEBUG'
    level = (level or os.environ.get('RISKGRID_LOG_LEVEL', 'INFO')).upper()

    logger = logging.getLogger('riskgrid')
    logger.setLevel(level)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
    logger.propagate = False
    return logger


class WarningLog:
    """Collects warnings so they can be both logged and reported"""

    def __init__(self, logger):
        self.logger = logger
        self.messages = []

    def warn(self, message):
        self.logger.warning(message)
        self.messages.append(message)

    def extend(self, messages):
        for message in messages:
            self.warn(message)
