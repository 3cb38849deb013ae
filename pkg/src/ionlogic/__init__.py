"""Pulse-level simulation of a mixed-species (Be/Mg) two-ion register."""

__version__ = "0.1.0"
