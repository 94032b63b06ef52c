# details: one-shot logging setup for CLI / server entry points
from __future__ import annotations
import logging
from typing import Optional

from .config import get_cfg

_FMT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
_DONE = False


def setup_logging(level: Optional[str] = None) -> None:
    global _DONE
    lvl = (level or get_cfg().log_level or "INFO").upper()
    if _DONE:
        logging.getLogger().setLevel(lvl)
        return
    logging.basicConfig(level=lvl, format=_FMT)
    _DONE = True
