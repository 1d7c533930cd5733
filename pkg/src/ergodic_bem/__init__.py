"""Backward Euler-Maruyama temporal averages for ergodic SDEs."""

__version__ = "0.1.0"
