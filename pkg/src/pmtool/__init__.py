"""Numerical toolkit for Pomeau-Manneville maps."""

__version__ = "0.1.0"
