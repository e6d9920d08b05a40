"""Savitzky-Golay filtered neural controlled differential equations on SO(3)."""

__version__ = "0.1.0"
