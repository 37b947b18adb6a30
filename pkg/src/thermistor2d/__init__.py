"""Finite-difference tools for the degenerate thermistor system in 2D."""

__version__ = "0.1.0"
