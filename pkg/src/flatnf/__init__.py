"""Flatness test and explicit triangular normal form for discrete-time systems."""

__version__ = "0.1.0"
