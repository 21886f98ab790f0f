"""Trajectory simulation and smoothing analysis for a partially observed qubit."""

__version__ = "0.1.0"
