"""Central logging configuration.

Called once at process startup by the CLI entry point. Level is taken from
`settings.log_level` (default INFO) unless --verbose / --quiet override it.
Records go to stderr; stdout carries command results only (`cv` prints the
selected pair). Diagnostics are key=value lines, e.g.

    cg_solve iters=37 rel_residual=8.1e-09 dim=1002
    phase=fit seconds=1.920

Python warnings (scipy LinAlgWarning, numpy RuntimeWarning) are captured
into the `py.warnings` logger so they share the format.
"""

from __future__ import annotations

import logging
import sys
from typing import Optional

_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"
_DATEFMT = "%Y-%m-%d %H:%M:%S"


def cli_level(verbose: bool = False, quiet: bool = False) -> Optional[str]:
    """--verbose -> DEBUG, --quiet -> WARNING, neither -> settings default."""
    if verbose and quiet:
        raise ValueError("--verbose and --quiet are mutually exclusive")
    if verbose:
        return "DEBUG"
    if quiet:
        return "WARNING"
    return None


def setup_logging(level: str | None = None) -> None:
    """Configure the root logger; repeated calls replace the handler."""
    if level is None:
        from conjnngp.config import settings
        level = settings.log_level

    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)

    handler = logging.StreamHandler(stream=sys.stderr)
    handler.setFormatter(logging.Formatter(_FORMAT, datefmt=_DATEFMT))
    root.addHandler(handler)
    root.setLevel(level.upper())
    logging.captureWarnings(True)
