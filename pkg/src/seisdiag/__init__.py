"""Seismic damage diagnosis from cumulative-intensity features and cost-sensitive SVMs."""

__version__ = "0.1.0"
