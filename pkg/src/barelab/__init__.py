"""Robust classifier training under label noise with batch-adaptive sample selection."""

__version__ = "0.1.0"

from . import data, experiments, nn, noise, selection, trainer  # noqa: E402,F401
