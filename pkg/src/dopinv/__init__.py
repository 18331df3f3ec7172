"""Inverse doping profile toolkit: forward DtN simulation, level-set and
Landweber-Kaczmarz reconstruction, and the discrete lattice identification."""

__version__ = "0.1.0"
