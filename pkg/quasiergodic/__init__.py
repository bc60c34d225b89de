"""Numerical toolkit for orbit closures, regularity functionals and ergodic averages of flows."""

__version__ = "0.4.0"
