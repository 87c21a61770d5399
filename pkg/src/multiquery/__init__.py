"""Solver-independent multi-query analysis: designs, UQ, sensitivity, inference, optimization."""

__version__ = "0.1.0"
