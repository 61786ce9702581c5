"""Consensus-free payments over Byzantine reliable broadcast."""

__version__ = "0.1.0"
