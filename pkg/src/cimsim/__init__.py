"""Positive-P ensemble simulation of measurement-feedback coherent Ising machines."""

__version__ = "0.1.0"
