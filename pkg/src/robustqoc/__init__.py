"""Robust quantum control by direct, constrained trajectory optimization."""

__version__ = "0.1.0"
