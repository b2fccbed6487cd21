"""Bayesian occupancy, distance tracking and temperature screening for
low-resolution thermopile arrays."""

__version__ = "0.1.0"
