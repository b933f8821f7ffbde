"""Decomposed representation learning for individual treatment effect estimation."""
__version__ = "0.1.0"
