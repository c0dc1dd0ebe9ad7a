"""Rigid point-cloud registration by learned sequential update maps."""

__version__ = "0.1.0"
