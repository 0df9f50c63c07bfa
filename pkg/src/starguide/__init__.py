"""Thin star-shaped waveguides and their quantum-graph limits."""

__version__ = "0.1.0"
