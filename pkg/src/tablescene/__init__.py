"""Deterministic tabletop scene assembly: rotation search, top-view scale alignment and collision checks."""

__version__ = "0.1.0"
