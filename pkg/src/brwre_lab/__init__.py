"""Branching random walks in a time-random environment: exact computations,
simulation and numerical checks of the derivative-martingale theory."""

__version__ = "0.1.0"
