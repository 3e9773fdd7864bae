"""Simulation and moment checks for Brownian motion on the unitary group."""

__version__ = "0.1.0"
