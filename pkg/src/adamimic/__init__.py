"""Adaptive imitation/performance reward weighting for learning biped gaits."""

__version__ = "0.1.0"
