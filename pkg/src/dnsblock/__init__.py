"""Simulate DNS tampering by recursive resolvers, detect it, and report on it."""

__version__ = "0.1.0"
