"""Equalized-odds fair survival analysis."""

__version__ = "0.1.0"
