"""Simulation-based inference over mixed discrete/continuous eVTOL designs."""

__version__ = "0.1.0"
