"""Continual learning with composed prefix modules and adaptive pruning."""

__version__ = "0.1.0"
