"""Exact decision procedure for Hamiltonian horizontal differential operators on jet spaces."""

__version__ = "0.1.0"
