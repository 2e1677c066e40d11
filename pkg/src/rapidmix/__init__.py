"""Numerical companion for rapid mixing of Davies dynamics on commuting spin systems."""

__version__ = "0.1.0"
