"""Curiosity-driven reinforcement learning with sparse modular recurrent world models, on numpy."""

__version__ = "0.1.0"
