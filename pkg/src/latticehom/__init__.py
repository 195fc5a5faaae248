"""Numerical toolkit for high-contrast periodic lattice energies and their homogenized limits."""

__version__ = "0.1.0"
