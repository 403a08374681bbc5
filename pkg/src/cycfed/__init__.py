"""Simulation and analysis of federated averaging with cyclic client participation."""

__version__ = "0.1.0"
