"""Drift-plus-penalty optimization of time averages, with dual and phase analysis."""

__version__ = "0.1.0"
