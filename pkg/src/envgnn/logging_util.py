"""Package logging: one namespaced logger, configured once by the CLI."""

from __future__ import annotations

import logging


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


def configure(verbose: bool = False) -> None:
    """Install a stderr handler for the package root logger."""
    root = logging.getLogger("envgnn")
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
