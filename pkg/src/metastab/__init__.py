"""Semiclassical, spectral and Monte Carlo analysis of quasi-stationary
distributions for killed overdamped Langevin diffusions in double-well
domains."""

__version__ = "0.1.0"

from . import asymptotics, cli, expr, landscape, sde, spectral  # noqa: F401
