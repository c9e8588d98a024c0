"""Differentiable inverse rendering of multi-view one-light-at-a-time captures."""

__version__ = "0.1.0"
