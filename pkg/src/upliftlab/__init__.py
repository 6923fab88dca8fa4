"""Uplift modeling with large-scale contexts."""

__version__ = "0.1.0"
