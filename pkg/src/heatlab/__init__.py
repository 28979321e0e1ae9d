"""Numerical laboratory for nonnegative and null controllability of semilinear heat equations."""

__version__ = "0.1.0"
