"""Simulation and verification lab for exchangeable and c.i.d. sequences."""

__version__ = "0.1.0"
