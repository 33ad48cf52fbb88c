"""Variational solvers for boundary value problems on irregular planar domains."""

__version__ = "0.1.0"
