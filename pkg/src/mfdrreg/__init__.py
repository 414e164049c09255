"""Penalized regression paths with marginal false discovery rate bounds."""

__version__ = "0.1.0"
