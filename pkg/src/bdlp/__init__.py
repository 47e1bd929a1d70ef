"""Spatial birth-death-competition processes: simulation, correlation hierarchy and bounds."""

__version__ = "0.1.0"
