"""Thermal transport simulation, model reduction, and optimal feed-in
control for district heating networks."""

__version__ = "0.1.0"
