"""Solvers and regularity probes for parabolic bilateral obstacle problems."""

__version__ = "0.1.0"
