"""Permissioned-to-proof-of-stake compiler, simulator and property harness."""

__version__ = "0.1.0"
