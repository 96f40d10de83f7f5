"""Reduced-gradient reinforcement learning under hard state-dependent constraints."""

__version__ = "0.1.0"
