"""Simulation and tomography toolkit for spatially multiplexed photon-number-resolving detectors."""

__version__ = "0.1.0"
