"""Logging setup for the command-line entry points."""

import logging
import os
import sys

from dotenv import load_dotenv

LOG_ENV_VAR = "CROWDSWAP_LOG"
DEFAULT_LEVEL = "warn"
LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def resolve_level(value):
    """Map a CROWDSWAP_LOG value to a logging level; unknown values fall back to warn."""
    if not value:
        return LEVELS[DEFAULT_LEVEL]
    return LEVELS.get(value.strip().lower(), LEVELS[DEFAULT_LEVEL])


def configure_logging(stream=None):
    """Configure the `crowdswap` logger hierarchy from CROWDSWAP_LOG (a .env file is honoured)."""
    load_dotenv()
    raw = os.environ.get(LOG_ENV_VAR)
    level = resolve_level(raw)

    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("crowdswap")
    for old in list(root.handlers):
        root.removeHandler(old)
    root.addHandler(handler)
    root.setLevel(level)
    root.propagate = False
    if raw and raw.strip().lower() not in LEVELS:
        root.warning("Ignoring unknown %s value '%s'; using %s", LOG_ENV_VAR, raw, DEFAULT_LEVEL)
    return level
